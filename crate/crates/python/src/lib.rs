//! Python bindings: tables, schemas, trained models and the QA report.

use std::collections::BTreeMap;

use engine::pipeline::{generate, train, train_two_table, Generated, GenerationRequest};
use engine::qa::{evaluate as qa_evaluate, QaOptions};
use engine::schema::TableRole;
use engine::store::ModelStore;
use engine::trainer::TrainConfig;
use engine::{AnalysisOptions, ColumnKind, RawTable, TableSchema};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

create_exception!(synthtab, SynthtabError, PyValueError, "Raised for any failure inside the engine.");

fn err(e: impl std::fmt::Display) -> PyErr {
    SynthtabError::new_err(e.to_string())
}

/// Serialises keyword arguments with Python's `json` module so that the
/// engine's serde types can validate them, unknown keys included.
fn kwargs_json(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    match kwargs {
        Some(k) => py.import("json")?.call_method1("dumps", (k,))?.extract(),
        None => Ok("{}".into()),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(err)
}

/// Columns of string cells; `None` marks a missing value.
#[pyclass(name = "Table", module = "synthtab")]
struct PyTable {
    inner: RawTable,
}

#[pymethods]
impl PyTable {
    /// Builds a table from a mapping of column name to a list of cells.
    #[new]
    #[pyo3(signature = (columns, order=None))]
    fn new(columns: BTreeMap<String, Vec<Option<String>>>, order: Option<Vec<String>>) -> PyResult<Self> {
        let names = order.unwrap_or_else(|| columns.keys().cloned().collect());
        let mut cols = Vec::with_capacity(names.len());
        for n in &names {
            cols.push(columns.get(n).cloned().ok_or_else(|| err(format!("no column `{n}`")))?);
        }
        Ok(Self {
            inner: RawTable::new(names, cols).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RawTable::read_csv(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RawTable::from_csv_reader(text.as_bytes()).map_err(err)?,
        })
    }

    fn to_csv(&self) -> PyResult<String> {
        self.inner.to_csv_string().map_err(err)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(err)
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn column(&self, name: &str) -> PyResult<Vec<Option<String>>> {
        self.inner
            .column(name)
            .map(<[_]>::to_vec)
            .ok_or_else(|| err(format!("no column `{name}`")))
    }

    fn to_dict(&self) -> BTreeMap<String, Vec<Option<String>>> {
        self.inner.names().iter().cloned().zip(self.inner.columns().iter().cloned()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!("Table({} rows, columns={:?})", self.inner.n_rows(), self.inner.names())
    }
}

/// Per-column encodings inferred from a training table.
#[pyclass(name = "Schema", module = "synthtab")]
struct PySchema {
    inner: TableSchema,
}

#[pymethods]
impl PySchema {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TableSchema::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.specs.iter().map(|s| s.column_name.clone()).collect()
    }

    #[getter]
    fn is_sequential(&self) -> bool {
        self.inner.is_sequential()
    }

    fn __repr__(&self) -> String {
        format!("Schema(columns={:?}, sequential={})", self.columns(), self.is_sequential())
    }
}

/// Infers a schema. `kinds` maps column names to declared kinds; further
/// keyword arguments are analysis options.
#[pyfunction]
#[pyo3(signature = (table, kinds=None, group_key=None, primary_key=None, **options))]
fn analyze(
    py: Python<'_>,
    table: &PyTable,
    kinds: Option<BTreeMap<String, String>>,
    group_key: Option<String>,
    primary_key: Option<String>,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PySchema> {
    let mut opts: AnalysisOptions = from_json(&kwargs_json(py, options)?)?;
    if group_key.is_some() {
        opts.table_role = TableRole::Sequential;
        opts.group_key = group_key;
    }
    if primary_key.is_some() {
        opts.primary_key = primary_key;
    }
    let kinds: Option<BTreeMap<String, ColumnKind>> = kinds
        .map(|k| {
            k.into_iter()
                .map(|(c, v)| Ok((c, from_json(&format!("\"{v}\""))?)))
                .collect::<PyResult<_>>()
        })
        .transpose()?;
    let inner = py
        .detach(|| engine::analyze(&table.inner, kinds.as_ref(), &opts))
        .map_err(err)?;
    Ok(PySchema { inner })
}

/// A trained single-table or two-table model.
#[pyclass(name = "Model", module = "synthtab")]
struct PyModel {
    inner: ModelStore,
}

#[pymethods]
impl PyModel {
    /// Trains on one table; keyword arguments are training options such as
    /// `max_epochs` or `seed`.
    #[staticmethod]
    #[pyo3(signature = (schema, table, **config))]
    fn train(py: Python<'_>, schema: &PySchema, table: &PyTable, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg: TrainConfig = from_json(&kwargs_json(py, config)?)?;
        let model = py.detach(|| train(&schema.inner, &table.inner, &cfg)).map_err(err)?;
        Ok(Self {
            inner: ModelStore::Single(model),
        })
    }

    /// Trains a context model and a sequential model conditioned on it.
    #[staticmethod]
    #[pyo3(signature = (context_schema, context, schema, table, context_key, foreign_key, **config))]
    #[allow(clippy::too_many_arguments)]
    fn train_two_table(
        py: Python<'_>,
        context_schema: &PySchema,
        context: &PyTable,
        schema: &PySchema,
        table: &PyTable,
        context_key: &str,
        foreign_key: &str,
        config: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let cfg: TrainConfig = from_json(&kwargs_json(py, config)?)?;
        let model = py
            .detach(|| {
                train_two_table(
                    &context_schema.inner,
                    &context.inner,
                    &schema.inner,
                    &table.inner,
                    context_key,
                    foreign_key,
                    &cfg,
                )
            })
            .map_err(err)?;
        Ok(Self {
            inner: ModelStore::TwoTable(model),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelStore::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn is_two_table(&self) -> bool {
        matches!(self.inner, ModelStore::TwoTable(_))
    }

    /// Training history as JSON; one report per table for two-table models.
    fn train_report(&self) -> PyResult<String> {
        let reports = match &self.inner {
            ModelStore::Single(m) => vec![&m.report],
            ModelStore::TwoTable(t) => vec![&t.context.report, &t.sequential.report],
        };
        serde_json::to_string_pretty(&reports).map_err(err)
    }

    /// Samples `n` rows (or subjects). Returns a Table, or a
    /// `(context, sequential)` pair for two-table models.
    #[pyo3(signature = (n, seed=0, temperature=1.0, conditions=None, impute=None))]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        seed: u64,
        temperature: f64,
        conditions: Option<BTreeMap<String, Option<String>>>,
        impute: Option<Vec<String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let req = GenerationRequest {
            n,
            seed,
            temperature,
            conditions: conditions.unwrap_or_default(),
            impute: impute.unwrap_or_default(),
            order: None,
        };
        match py.detach(|| generate(&self.inner, &req)).map_err(err)? {
            Generated::Single(t) => Ok(Bound::new(py, PyTable { inner: t })?.into_any()),
            Generated::TwoTable { context, sequential } => {
                let pair = (PyTable { inner: context }, PyTable { inner: sequential });
                Ok(PyTuple::new(py, [Bound::new(py, pair.0)?.into_any(), Bound::new(py, pair.1)?.into_any()])?.into_any())
            }
        }
    }
}

/// Fidelity and privacy report as a dict.
#[pyfunction]
#[pyo3(signature = (schema, trn, hold, syn, **options))]
fn evaluate<'py>(
    py: Python<'py>,
    schema: &PySchema,
    trn: &PyTable,
    hold: &PyTable,
    syn: &PyTable,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts: QaOptions = from_json(&kwargs_json(py, options)?)?;
    let report = py
        .detach(|| qa_evaluate(&schema.inner, &trn.inner, &hold.inner, &syn.inner, &opts))
        .map_err(err)?;
    let text = serde_json::to_string(&report).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn synthtab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("SynthtabError", m.py().get_type::<SynthtabError>())?;
    Ok(())
}
