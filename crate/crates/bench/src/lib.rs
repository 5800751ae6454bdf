//! Fixtures shared by the benchmarks under `benches/`.

use absgd::data::{gaussian_mixture, random_class_means};
use absgd::models::{init_params, InitPolicy};
use absgd::{Dataset, ModelArch, ParamVector, SeededRng};

/// A `classes`-way Gaussian mixture with `per_class` points in `dim`
/// dimensions and a freshly initialized MLP with the given hidden widths.
pub fn fixture(per_class: usize, dim: usize, classes: usize, hidden: &[usize]) -> (Dataset, ModelArch, ParamVector) {
    let mut rng = SeededRng::with_stream(0, 1);
    let means = random_class_means(classes, dim, 2.0, &mut rng);
    let counts = vec![per_class; classes];
    let ds = gaussian_mixture(&counts, &means, &vec![1.0; classes], &mut rng).expect("valid mixture");
    let arch = ModelArch::mlp(dim, hidden, classes);
    let params = init_params(&arch, &mut SeededRng::with_stream(0, 2), InitPolicy::FanIn);
    (ds, arch, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let (ds, arch, params) = fixture(5, 3, 4, &[8]);
        assert_eq!(ds.len(), 20);
        assert_eq!(arch.input_dim, 3);
        assert_eq!(params.len(), 3 * 8 + 8 + 8 * 4 + 4);
    }
}
