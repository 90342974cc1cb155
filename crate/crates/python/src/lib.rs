//! Python bindings: mesh I/O, synthetic scenes, hierarchies, the model, and
//! the gradient checker, exposed as the `meshvox_py` extension module.
//!
//! The bindings instantiate the double-precision pipeline.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use meshvox::error::Error;
use meshvox::hierarchy::{build_hierarchy, HierarchySpec, SimplifyScheme};
use meshvox::mesh::{load_mesh, save_labeled_ply, save_ply, SurfaceMesh};
use meshvox::model::{build_model, Model, ModelConfig};
use meshvox::ops::gradcheck::{self, DEFAULT_STEP, DEFAULT_TOL};
use meshvox::ops::Checkpoint;
use meshvox::train::{
    evaluate, generate_scene, predict_labels, train, Hyperparams, SceneSpec, TrainScene,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::Usage(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A triangular mesh with per-vertex positions, colors, and optional labels.
#[pyclass(name = "Mesh", from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: SurfaceMesh,
}

#[pymethods]
impl PyMesh {
    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .positions()
            .iter()
            .map(|p| (p.x, p.y, p.z))
            .collect()
    }

    fn colors(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .colors()
            .iter()
            .map(|c| (c[0], c[1], c[2]))
            .collect()
    }

    fn labels(&self) -> Option<Vec<i32>> {
        self.inner.labels().map(|l| l.to_vec())
    }

    fn faces(&self) -> Vec<(u32, u32, u32)> {
        self.inner
            .faces()
            .iter()
            .map(|f| (f[0], f[1], f[2]))
            .collect()
    }

    /// Sorted one-ring neighborhood of a vertex.
    fn one_ring(&self, i: usize) -> PyResult<Vec<u32>> {
        Ok(self.inner.one_ring(i).map_err(py_err)?.to_vec())
    }

    /// Retained edge count under random sampling with the given probability.
    fn sample_edges(&self, keep_probability: f64, seed: u64) -> PyResult<usize> {
        Ok(self
            .inner
            .sample_edges(keep_probability, seed)
            .map_err(py_err)?
            .len())
    }

    #[pyo3(signature = (path, ascii = false))]
    fn save(&self, path: &str, ascii: bool) -> PyResult<()> {
        save_ply(&self.inner, path, ascii).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(vertices={}, faces={}, labeled={})",
            self.inner.vertex_count(),
            self.inner.face_count(),
            self.inner.labels().is_some()
        )
    }
}

/// Load a PLY or OBJ mesh.
#[pyfunction(name = "load_mesh")]
fn py_load_mesh(path: &str) -> PyResult<PyMesh> {
    Ok(PyMesh {
        inner: load_mesh(path).map_err(py_err)?,
    })
}

/// Generate a synthetic labeled scene; deterministic per seed.
#[pyfunction(name = "generate_scene")]
#[pyo3(signature = (seed, spec_json = None))]
fn py_generate_scene(seed: u64, spec_json: Option<&str>) -> PyResult<PyMesh> {
    let spec: SceneSpec = match spec_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SceneSpec::default(),
    };
    Ok(PyMesh {
        inner: generate_scene(&spec, seed).map_err(py_err)?.mesh,
    })
}

/// A mesh simplification hierarchy with trace maps.
#[pyclass(name = "Hierarchy")]
struct PyHierarchy {
    inner: meshvox::hierarchy::MeshHierarchy,
}

#[pymethods]
impl PyHierarchy {
    /// Vertex counts per level, base level first.
    fn level_vertex_counts(&self) -> Vec<usize> {
        (0..self.inner.depth())
            .map(|l| self.inner.level(l).vertex_count())
            .collect()
    }

    fn methods(&self) -> Vec<String> {
        self.inner
            .tags()
            .iter()
            .map(|t| format!("{t:?}").to_lowercase())
            .collect()
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).map_err(py_err)
    }
}

#[pyfunction(name = "build_hierarchy")]
#[pyo3(signature = (mesh, levels = 3, scheme = "default"))]
fn py_build_hierarchy(mesh: &PyMesh, levels: usize, scheme: &str) -> PyResult<PyHierarchy> {
    let scheme = match scheme {
        "default" => SimplifyScheme::VcQem,
        "vc_only" => SimplifyScheme::VcOnly,
        "qem_only" => SimplifyScheme::QemOnly,
        other => return Err(PyValueError::new_err(format!("unknown scheme {other}"))),
    };
    let spec = HierarchySpec {
        levels,
        scheme,
        ..Default::default()
    };
    Ok(PyHierarchy {
        inner: build_hierarchy(&mesh.inner, &spec).map_err(py_err)?,
    })
}

/// Active-voxel count of a mesh voxelized at the given resolution
/// (voxels per meter).
#[pyfunction(name = "voxelize_stats")]
fn py_voxelize_stats(mesh: &PyMesh, resolution: f64) -> PyResult<usize> {
    let (grid, _) = meshvox::voxel::voxelize::<f64>(&mesh.inner, resolution).map_err(py_err)?;
    Ok(grid.active_count())
}

/// The dual-domain segmentation network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model<f64>,
    hierarchy_spec: HierarchySpec,
}

#[pymethods]
impl PyModel {
    /// Build from a JSON model configuration (or the mini preset).
    #[new]
    #[pyo3(signature = (seed = 0, config_json = None))]
    fn new(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let config: ModelConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelConfig::mini(4),
        };
        Ok(PyModel {
            inner: build_model(&config, seed).map_err(py_err)?,
            hierarchy_spec: HierarchySpec {
                levels: config.levels,
                ..Default::default()
            },
        })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Train on labeled meshes; returns the final (loss, train accuracy).
    #[pyo3(signature = (meshes, epochs = 20, seed = 0, base_lr = 0.1, momentum = 0.85, augment = true))]
    fn fit(
        &mut self,
        meshes: Vec<PyMesh>,
        epochs: usize,
        seed: u64,
        base_lr: f64,
        momentum: f64,
        augment: bool,
    ) -> PyResult<(f64, f64)> {
        let scenes: Vec<TrainScene> = meshes
            .iter()
            .map(|m| TrainScene::from_mesh(m.inner.clone(), &self.hierarchy_spec))
            .collect::<Result<_, _>>()
            .map_err(py_err)?;
        let hp = Hyperparams {
            epochs,
            seed,
            base_lr,
            momentum,
            augment: if augment {
                Default::default()
            } else {
                meshvox::train::AugmentRanges::none()
            },
            ..Default::default()
        };
        let report = train(&mut self.inner, &scenes, &hp, |_| {}).map_err(py_err)?;
        Ok((report.final_loss, report.final_train_acc))
    }

    /// Per-vertex class predictions on the original mesh.
    fn predict(&self, mesh: &PyMesh) -> PyResult<Vec<i32>> {
        let scene =
            TrainScene::from_mesh(mesh.inner.clone(), &self.hierarchy_spec).map_err(py_err)?;
        predict_labels(&self.inner, &scene).map_err(py_err)
    }

    /// Evaluate mIoU / mean class accuracy on labeled meshes.
    fn evaluate(&self, meshes: Vec<PyMesh>) -> PyResult<(f64, f64)> {
        let scenes: Vec<TrainScene> = meshes
            .iter()
            .map(|m| TrainScene::from_mesh(m.inner.clone(), &self.hierarchy_spec))
            .collect::<Result<_, _>>()
            .map_err(py_err)?;
        let (report, _) = evaluate(&self.inner, &scenes).map_err(py_err)?;
        Ok((report.miou, report.macc))
    }

    /// Write predictions for a mesh as a colored, labeled PLY.
    fn predict_to_ply(&self, mesh: &PyMesh, path: &str) -> PyResult<()> {
        let labels = self.predict(mesh)?;
        save_labeled_ply(&mesh.inner, &labels, path, false).map_err(py_err)
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        let config = self.config_json()?;
        self.inner
            .params
            .save_checkpoint(path, &config)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load_checkpoint(path: &str) -> PyResult<PyModel> {
        let ck = Checkpoint::load(path).map_err(py_err)?;
        let config: ModelConfig = serde_json::from_str(&ck.config_json)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let mut model = build_model::<f64>(&config, 0).map_err(py_err)?;
        model.params = ck.bind(&model.params).map_err(py_err)?;
        Ok(PyModel {
            hierarchy_spec: HierarchySpec {
                levels: config.levels,
                ..Default::default()
            },
            inner: model,
        })
    }
}

/// Check one op (or all) against central finite differences; returns a list
/// of `(op, max_rel_err, pass)` tuples.
#[pyfunction(name = "gradcheck")]
#[pyo3(signature = (op = "all", seeds = 2))]
fn py_gradcheck(op: &str, seeds: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let names: Vec<&str> = if op == "all" {
        gradcheck::op_names().to_vec()
    } else {
        vec![op]
    };
    let seed_list: Vec<u64> = (0..seeds).collect();
    let mut out = Vec::new();
    for name in names {
        let reports =
            gradcheck::run_op(name, &seed_list, DEFAULT_STEP, DEFAULT_TOL).map_err(py_err)?;
        let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        let pass = reports.iter().all(|r| r.pass);
        out.push((name.to_string(), worst, pass));
    }
    Ok(out)
}

#[pymodule]
fn meshvox_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyHierarchy>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(py_load_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(py_generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(py_build_hierarchy, m)?)?;
    m.add_function(wrap_pyfunction!(py_voxelize_stats, m)?)?;
    m.add_function(wrap_pyfunction!(py_gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
