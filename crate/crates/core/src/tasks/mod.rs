//! Benchmark task generators, analytic baselines and MNIST ingestion.

mod addition;
mod copy;
mod mnist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub use addition::{addition_baseline_mse, gen_addition, AdditionSpec};
pub use copy::{copy_baseline_ce, gen_copy, CopySpec, CopyVariant, BLANK, DATA_SYMBOLS, RUN, SYMBOLS};
pub use mnist::{
    load_mnist_dir, load_mnist_idx, parse_idx_images, parse_idx_labels, to_pixel_sequence,
    ImageSet, MnistData, SeqMnistSpec, IMAGES_MAGIC, LABELS_MAGIC, PIXELS,
};

/// Per-step model inputs of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// One-hot symbols over `alphabet` classes.
    Symbols { alphabet: usize, symbols: Vec<u8> },
    /// Two channels: values in the first, marker indicator in the second.
    Marked { values: Vec<f64>, markers: [usize; 2] },
    /// One scalar per step, `byte / 255`.
    Pixels(Vec<u8>),
    /// Arbitrary `m x T` inputs.
    Dense(Matrix),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Symbols { symbols, .. } => symbols.len(),
            Inputs::Marked { values, .. } => values.len(),
            Inputs::Pixels(p) => p.len(),
            Inputs::Dense(m) => m.cols(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input dimension `m`.
    pub fn dim(&self) -> usize {
        match self {
            Inputs::Symbols { alphabet, .. } => *alphabet,
            Inputs::Marked { .. } => 2,
            Inputs::Pixels(_) => 1,
            Inputs::Dense(m) => m.rows(),
        }
    }

    /// Writes the input vector for step `t` into `out` (length `dim`).
    pub fn write_step(&self, t: usize, out: &mut [f64]) {
        match self {
            Inputs::Symbols { symbols, .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[symbols[t] as usize] = 1.0;
            }
            Inputs::Marked { values, markers } => {
                out[0] = values[t];
                out[1] = if markers.contains(&t) { 1.0 } else { 0.0 };
            }
            Inputs::Pixels(p) => out[0] = p[t] as f64 / 255.0,
            Inputs::Dense(m) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = m.get(r, t);
                }
            }
        }
    }
}

/// Per-step targets. Entries at masked-out steps are placeholders.
#[derive(Debug, Clone, PartialEq)]
pub enum StepTargets {
    Classes(Vec<u8>),
    Values(Vec<f64>),
}

impl StepTargets {
    pub fn len(&self) -> usize {
        match self {
            StepTargets::Classes(c) => c.len(),
            StepTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Inputs,
    pub targets: StepTargets,
    /// Steps that contribute to the loss.
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn new(inputs: Inputs, targets: StepTargets, mask: Vec<bool>) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.len() != mask.len() {
            return Err(Error::Config(format!(
                "sample lengths disagree: inputs {}, targets {}, mask {}",
                inputs.len(),
                targets.len(),
                mask.len()
            )));
        }
        Ok(Sample { inputs, targets, mask })
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Task selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Copy {
        lag: usize,
        #[serde(default)]
        variant: CopyVariant,
    },
    Addition {
        length: usize,
    },
    SeqMnist {
        #[serde(default = "default_true")]
        permute: bool,
        #[serde(default)]
        permutation_seed: u64,
    },
    /// Static MNIST classification (Highway classifier).
    Mnist,
}

fn default_true() -> bool {
    true
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Copy { lag, variant } => CopySpec { lag: *lag, variant: *variant }.validate(),
            TaskSpec::Addition { length } => AdditionSpec { length: *length }.validate(),
            _ => Ok(()),
        }
    }

    pub fn needs_mnist(&self) -> bool {
        matches!(self, TaskSpec::SeqMnist { .. } | TaskSpec::Mnist)
    }

    /// Input dimension per step (784 for static MNIST).
    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::Copy { .. } => SYMBOLS,
            TaskSpec::Addition { .. } => 2,
            TaskSpec::SeqMnist { .. } => 1,
            TaskSpec::Mnist => PIXELS,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskSpec::Copy { .. } => SYMBOLS,
            TaskSpec::Addition { .. } => 1,
            TaskSpec::SeqMnist { .. } | TaskSpec::Mnist => 10,
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, TaskSpec::Addition { .. })
    }

    /// Draws one sample of a generated task.
    pub fn generate(&self, rng: &mut Rng) -> Result<Sample> {
        match self {
            TaskSpec::Copy { lag, variant } => gen_copy(&CopySpec { lag: *lag, variant: *variant }, rng),
            TaskSpec::Addition { length } => gen_addition(&AdditionSpec { length: *length }, rng),
            _ => Err(Error::Config("MNIST tasks are loaded from disk, not generated".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 100_000,
            valid: 10_000,
            test: 10_000,
        }
    }
}

/// Materialized datasets for one run.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sequences(Vec<Sample>),
    Images(ImageSet),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Sequences(s) => s.len(),
            Dataset::Images(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Generates train/valid/test sets for a synthetic task. Each part draws
/// from its own substream of `seed`.
pub fn make_split(task: &TaskSpec, sizes: SplitSizes, seed: u64) -> Result<Split> {
    task.validate()?;
    let root = Rng::new(seed);
    let gen = |label: &str, count: usize| -> Result<Dataset> {
        let mut rng = root.fork(label);
        let samples = (0..count).map(|_| task.generate(&mut rng)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset::Sequences(samples))
    };
    Ok(Split {
        train: gen("train", sizes.train)?,
        valid: gen("valid", sizes.valid)?,
        test: gen("test", sizes.test)?,
    })
}

/// Builds the split for an MNIST task from loaded data, truncating each
/// part to `sizes`.
pub fn mnist_split(task: &TaskSpec, data: &MnistData, sizes: SplitSizes) -> Result<Split> {
    let parts = [(&data.train, sizes.train), (&data.valid, sizes.valid), (&data.test, sizes.test)];
    let mut out = Vec::with_capacity(3);
    for (set, size) in parts {
        let set = set.truncated(size);
        out.push(match task {
            TaskSpec::Mnist => Dataset::Images(set),
            TaskSpec::SeqMnist { permute, permutation_seed } => {
                let spec = SeqMnistSpec::new(*permute, *permutation_seed);
                let samples = (0..set.len())
                    .map(|i| to_pixel_sequence(set.image(i), set.labels[i], &spec))
                    .collect::<Result<Vec<_>>>()?;
                Dataset::Sequences(samples)
            }
            _ => return Err(Error::Config("not an MNIST task".into())),
        });
    }
    let test = out.pop().expect("three parts");
    let valid = out.pop().expect("three parts");
    let train = out.pop().expect("three parts");
    Ok(Split { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_parts_differ() {
        let task = TaskSpec::Copy { lag: 5, variant: CopyVariant::FixedFixed };
        let sizes = SplitSizes { train: 20, valid: 10, test: 10 };
        let a = make_split(&task, sizes, 7).unwrap();
        let b = make_split(&task, sizes, 7).unwrap();
        assert_eq!(a, b);
        let (Dataset::Sequences(tr), Dataset::Sequences(va)) = (&a.train, &a.valid) else { panic!() };
        assert_eq!(tr.len(), 20);
        assert_ne!(tr[..10], va[..]);
        let c = make_split(&task, sizes, 8).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn default_sizes() {
        let s = SplitSizes::default();
        assert_eq!((s.train, s.valid, s.test), (100_000, 10_000, 10_000));
    }

    #[test]
    fn task_spec_toml() {
        let t: TaskSpec = toml::from_str("name = \"copy\"\nlag = 100\nvariant = \"variable_lag\"").unwrap();
        assert_eq!(t, TaskSpec::Copy { lag: 100, variant: CopyVariant::VariableLag });
        let t: TaskSpec = toml::from_str("name = \"seq_mnist\"").unwrap();
        assert_eq!(t, TaskSpec::SeqMnist { permute: true, permutation_seed: 0 });
        assert!(toml::from_str::<TaskSpec>("name = \"addition\"\nlength = 3\nextra = 1").is_err());
    }

    #[test]
    fn sample_lengths_checked() {
        let err = Sample::new(Inputs::Pixels(vec![1, 2]), StepTargets::Classes(vec![0]), vec![true, true]);
        assert!(err.is_err());
    }

    #[test]
    fn write_step_encodings() {
        let mut out = [9.0; 3];
        Inputs::Symbols { alphabet: 3, symbols: vec![2, 1] }.write_step(1, &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0]);
        let mut out = [0.0; 2];
        let m = Inputs::Marked { values: vec![0.25, 0.5, 0.75], markers: [0, 2] };
        m.write_step(2, &mut out);
        assert_eq!(out, [0.75, 1.0]);
        m.write_step(1, &mut out);
        assert_eq!(out, [0.5, 0.0]);
        let mut out = [0.0];
        Inputs::Pixels(vec![0, 255]).write_step(1, &mut out);
        assert_eq!(out, [1.0]);
    }
}
