//! Reference values shared by several test binaries.

/// `10000^(-2i/d)` computed through logarithms instead of `powf`.
pub fn inv_freq(i: usize, d: usize) -> f64 {
    (-(2.0 * i as f64 / d as f64) * 10000f64.ln()).exp()
}

pub fn reference_sinusoid(pos: usize, d: usize, j: usize) -> f64 {
    let angle = pos as f64 * inv_freq(j / 2, d);
    if j % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Values computed with 30-digit arithmetic.
pub const HIGH_PRECISION: &[(usize, usize, usize, &str)] = &[
    (1, 2, 0, "0.84147098480789650665250232163"),
    (1, 2, 1, "0.540302305868139717400936607443"),
    (7, 16, 5, "0.764842187284488426255859990192"),
    (100, 64, 10, "-0.988501673952796455268189348179"),
    (255, 128, 77, "0.475445397905964747136254914545"),
    (511, 256, 6, "-0.234515681700476852164184543882"),
    (511, 256, 7, "-0.972112336634280465548469465349"),
    (512, 256, 0, "0.0795184940128763528681611417062"),
    (512, 256, 255, "0.998486785947230268007561033178"),
    (333, 192, 100, "0.382958394247866843285324676639"),
    (300, 100, 51, "-0.989992496600445457271572794731"),
    (512, 2, 1, "-0.996833390848201948223168038889"),
    (64, 256, 128, "0.597195441362392051883546239208"),
    (400, 32, 31, "0.997471244358649753810452107857"),
    (499, 250, 3, "0.168502845491079396402489870531"),
    (17, 12, 9, "0.999329365385415487844423211577"),
];
