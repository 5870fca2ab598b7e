//! Python bindings: frames, the detector model, training and the
//! evaluation helpers.

use std::path::PathBuf;

use ltv_core::data::{load_checkpoint, save_checkpoint, RunConfig};
use ltv_core::geometry::{BBox, LabeledBox};
use ltv_core::imaging::{read_frame, write_pgm, PgmDepth, Sample, ThermalFrame};
use ltv_core::model::{Init, ModelConfig};
use ltv_core::postprocess::Detector;
use ltv_core::{Error, ErrorClass};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(ltv, NumericError, PyException);

fn py_err(e: Error) -> PyErr {
    match e.class() {
        ErrorClass::Config => PyValueError::new_err(e.to_string()),
        ErrorClass::Data => PyOSError::new_err(e.to_string()),
        ErrorClass::Numeric => NumericError::new_err(e.to_string()),
        ErrorClass::Other => PyException::new_err(e.to_string()),
    }
}

type BoxTuple = (f64, f64, f64, f64);

fn bbox(b: BoxTuple) -> PyResult<BBox> {
    BBox::new(b.0, b.1, b.2, b.3).map_err(py_err)
}

/// A single-channel thermal frame.
#[pyclass(module = "ltv", from_py_object)]
#[derive(Clone)]
struct Frame {
    inner: ThermalFrame,
}

#[pymethods]
impl Frame {
    /// Row-major intensities in [0, 1].
    #[new]
    fn new(width: usize, height: usize, values: Vec<f32>) -> PyResult<Self> {
        let inner = ThermalFrame::from_normalized(width, height, values).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads a PGM (8 or 16 bit) or raw f32 frame.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_frame(&path).map_err(py_err)? })
    }

    #[pyo3(signature = (path, sixteen_bit = true))]
    fn write_pgm(&self, path: PathBuf, sixteen_bit: bool) -> PyResult<()> {
        let depth = if sixteen_bit { PgmDepth::Sixteen } else { PgmDepth::Eight };
        write_pgm(&path, &self.inner, depth).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().into_owned()
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{})", self.inner.width, self.inner.height)
    }
}

#[pyclass(module = "ltv", frozen, get_all, from_py_object)]
#[derive(Clone)]
struct Detection {
    class_id: usize,
    score: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    level: usize,
}

#[pymethods]
impl Detection {
    #[new]
    #[pyo3(signature = (class_id, score, x1, y1, x2, y2, level = 0))]
    fn new(class_id: usize, score: f64, x1: f64, y1: f64, x2: f64, y2: f64, level: usize) -> Self {
        Self { class_id, score, x1, y1, x2, y2, level }
    }

    fn bbox(&self) -> BoxTuple {
        (self.x1, self.y1, self.x2, self.y2)
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection(class_id={}, score={:.4}, box=({:.1}, {:.1}, {:.1}, {:.1}))",
            self.class_id, self.score, self.x1, self.y1, self.x2, self.y2
        )
    }
}

impl From<ltv_core::postprocess::Detection> for Detection {
    fn from(d: ltv_core::postprocess::Detection) -> Self {
        Self {
            class_id: d.class_id,
            score: d.score,
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            level: d.level,
        }
    }
}

impl Detection {
    fn to_core(&self) -> PyResult<ltv_core::postprocess::Detection> {
        Ok(ltv_core::postprocess::Detection {
            bbox: bbox(self.bbox())?,
            score: self.score,
            class_id: self.class_id,
            level: self.level,
        })
    }
}

/// The detector network plus the run configuration it is trained and run with.
#[pyclass(module = "ltv")]
struct Model {
    inner: ltv_core::model::Model<f32>,
    config: RunConfig,
}

fn run_config(architecture: &str, settings: &[String]) -> PyResult<RunConfig> {
    RunConfig::default()
        .with_overrides(&[format!("model={architecture}")])
        .and_then(|c| c.with_overrides(settings))
        .map_err(py_err)
}

#[pymethods]
impl Model {
    /// `architecture` is `reference` or `shrunk`; `settings` are
    /// `key=value` configuration overrides.
    #[new]
    #[pyo3(signature = (architecture = "reference", seed = 0, settings = Vec::new()))]
    fn new(architecture: &str, seed: u64, settings: Vec<String>) -> PyResult<Self> {
        let config = run_config(architecture, &settings)?;
        let inner = ltv_core::model::Model::build(config.model.clone(), Init::Random { seed }).map_err(py_err)?;
        Ok(Self { inner, config })
    }

    /// Loads a checkpoint written by `save` or the command-line trainer.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, saved) = load_checkpoint(&path, &ModelConfig::reference()).map_err(py_err)?;
        let mut config = saved.unwrap_or_default();
        config.model = inner.config().clone();
        Ok(Self { inner, config })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner, &self.config).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Resolved configuration as `key = value` text.
    fn config_text(&self) -> String {
        self.config.to_text()
    }

    /// Applies `key=value` overrides to the training and detection settings.
    fn configure(&mut self, settings: Vec<String>) -> PyResult<()> {
        let next = self.config.clone().with_overrides(&settings).map_err(py_err)?;
        if next.model != self.config.model {
            return Err(PyValueError::new_err("architecture keys cannot change on a built model"));
        }
        self.config = next;
        Ok(())
    }

    /// Trains in place on frames with `(class_id, x1, y1, x2, y2)` boxes;
    /// returns the mean total loss of each epoch.
    #[pyo3(signature = (frames, boxes, augment = false))]
    fn train(
        &mut self,
        py: Python<'_>,
        frames: Vec<Frame>,
        boxes: Vec<Vec<(usize, f64, f64, f64, f64)>>,
        augment: bool,
    ) -> PyResult<Vec<f64>> {
        if frames.len() != boxes.len() {
            return Err(PyValueError::new_err(format!("{} frames but {} box lists", frames.len(), boxes.len())));
        }
        let samples = frames
            .into_iter()
            .zip(boxes)
            .map(|(f, bs)| {
                let labeled = bs
                    .into_iter()
                    .map(|(c, x1, y1, x2, y2)| Ok(LabeledBox::new(c, bbox((x1, y1, x2, y2))?)))
                    .collect::<PyResult<Vec<_>>>()?;
                Ok(Sample::new(f.inner, labeled))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let aug = if augment { self.config.augment } else { ltv_core::imaging::AugmentationSpec::none() };
        let cfg = self.config.train.clone();
        let model = &mut self.inner;
        let log = py
            .detach(|| ltv_core::train::train(model, &samples, &cfg, &aug, |_, _| Ok(())))
            .map_err(py_err)?;
        Ok(log.epochs.iter().map(|e| e.loss.total).collect())
    }

    /// Detections at or above `tau`, in frame pixels. `resolution` is the
    /// `(width, height)` network input; `None` uses the configured one.
    #[pyo3(signature = (frame, resolution = None, tau = None))]
    fn detect(&self, frame: &Frame, resolution: Option<(usize, usize)>, tau: Option<f64>) -> PyResult<Vec<Detection>> {
        let res = resolution.or(self.config.detect.resolution);
        let mut det = Detector::new(self.inner.clone(), res, tau.unwrap_or(self.config.detect.tau)).map_err(py_err)?;
        det.iou_thresh = self.config.detect.nms_iou;
        det.normalization = self.config.detect.normalization;
        det.validate().map_err(py_err)?;
        Ok(det.detect(&frame.inner).map_err(py_err)?.into_iter().map(Detection::from).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(params={})", self.inner.param_count())
    }
}

#[pyfunction]
fn iou(a: BoxTuple, b: BoxTuple) -> PyResult<f64> {
    ltv_core::geometry::iou(&bbox(a)?, &bbox(b)?).map_err(py_err)
}

#[pyfunction]
fn ciou_loss(pred: BoxTuple, target: BoxTuple) -> PyResult<f64> {
    ltv_core::train::ciou_loss(&bbox(pred)?, &bbox(target)?).map_err(py_err)
}

/// Greedy per-class non-maximum suppression.
#[pyfunction]
#[pyo3(signature = (detections, iou_thresh = 0.5))]
fn nms(detections: Vec<Detection>, iou_thresh: f64) -> PyResult<Vec<Detection>> {
    let core = detections.iter().map(Detection::to_core).collect::<PyResult<Vec<_>>>()?;
    Ok(ltv_core::postprocess::nms(&core, iou_thresh).into_iter().map(Detection::from).collect())
}

/// All-point interpolated AP from `(score, is_true_positive)` pairs;
/// `None` without ground truth.
#[pyfunction]
fn average_precision(scored: Vec<(f64, bool)>, n_gt: usize) -> Option<f64> {
    ltv_core::eval::average_precision(&scored, n_gt)
}

/// One synthetic scene: `(frame, [(class_id, x1, y1, x2, y2)], tags)`.
#[pyfunction]
#[pyo3(signature = (seed, width = 640, height = 512, hot_blobs = 0))]
#[allow(clippy::type_complexity)]
fn synth_frame(
    seed: u64,
    width: usize,
    height: usize,
    hot_blobs: usize,
) -> PyResult<(Frame, Vec<(usize, f64, f64, f64, f64)>, Vec<String>)> {
    let k = height as f64 / 512.0;
    let d = ltv_core::synth::SceneConfig::default();
    let cfg = ltv_core::synth::SceneConfig {
        width,
        height,
        hot_blobs: (hot_blobs, hot_blobs),
        child_height: (d.child_height.0 * k, d.child_height.1 * k),
        adult_height: (d.adult_height.0 * k, d.adult_height.1 * k),
        ..d
    };
    let (s, tags) = ltv_core::synth::random_frame(&cfg, seed).map_err(py_err)?;
    let boxes = s
        .boxes
        .iter()
        .map(|b| (b.class_id, b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2))
        .collect();
    Ok((Frame { inner: s.frame }, boxes, tags))
}

#[pymodule]
fn ltv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Frame>()?;
    m.add_class::<Detection>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(ciou_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(synth_frame, m)?)?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}
