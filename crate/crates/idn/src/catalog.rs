//! Tasks, model variants and per-hardware profiling data.
//!
//! A variant is a profiled network (accuracy, memory, frames per second on
//! each hardware class). The catalog materializes `tasks x variants x
//! replicas` distinct models: replicas of a variant are separate models with
//! identical parameters, and every task gets its own disjoint model set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("variant {name}: fps for hardware class {hardware} must be positive, got {fps}")]
    NonPositiveFps {
        name: String,
        hardware: String,
        fps: f64,
    },
    #[error("variant {name}: accuracy {accuracy} outside [0, 100]")]
    BadAccuracy { name: String, accuracy: f64 },
    #[error("variant {name}: memory {memory} MB must be positive")]
    BadMemory { name: String, memory: f64 },
    #[error("hardware class {0} not profiled in the catalog")]
    MissingHardware(String),
    #[error("catalog needs at least one task and one variant")]
    Empty,
    #[error("slot duration must be positive, got {0}")]
    BadSlotDuration(f64),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// One profiled model variant (a row of the profiling table).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    /// Accuracy on the 0-100 scale (e.g. mAP percentage).
    pub accuracy_pct: f64,
    pub memory_mb: f64,
    /// Frames per second per hardware class.
    pub fps: HashMap<String, f64>,
}

/// A materialized model: one replica of a variant dedicated to one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelVariant {
    pub task: usize,
    pub variant: usize,
    pub replica: usize,
}

/// Immutable catalog; safe to share once loaded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub variants: Vec<VariantRow>,
    pub models: Vec<ModelVariant>,
    pub tasks: usize,
    pub replicas: usize,
    pub slot_secs: f64,
}

impl Catalog {
    /// Builds the full catalog from profiled rows, materializing `replicas`
    /// copies of every variant for each of `tasks` tasks.
    pub fn load(
        rows: Vec<VariantRow>,
        tasks: usize,
        replicas: usize,
        slot_secs: f64,
    ) -> Result<Self, CatalogError> {
        if rows.is_empty() || tasks == 0 || replicas == 0 {
            return Err(CatalogError::Empty);
        }
        if slot_secs <= 0.0 {
            return Err(CatalogError::BadSlotDuration(slot_secs));
        }
        for row in &rows {
            if !(0.0..=100.0).contains(&row.accuracy_pct) {
                return Err(CatalogError::BadAccuracy {
                    name: row.name.clone(),
                    accuracy: row.accuracy_pct,
                });
            }
            if row.memory_mb <= 0.0 {
                return Err(CatalogError::BadMemory {
                    name: row.name.clone(),
                    memory: row.memory_mb,
                });
            }
            for (hw, &fps) in &row.fps {
                if fps <= 0.0 {
                    return Err(CatalogError::NonPositiveFps {
                        name: row.name.clone(),
                        hardware: hw.clone(),
                        fps,
                    });
                }
            }
        }
        let mut models = Vec::with_capacity(tasks * rows.len() * replicas);
        for task in 0..tasks {
            for variant in 0..rows.len() {
                for replica in 0..replicas {
                    models.push(ModelVariant {
                        task,
                        variant,
                        replica,
                    });
                }
            }
        }
        Ok(Catalog {
            variants: rows,
            models,
            tasks,
            replicas,
            slot_secs,
        })
    }

    /// Parses the profiling table from CSV: `name,accuracy,memory_mb` followed
    /// by one fps column per hardware class (column names from the header).
    pub fn rows_from_csv(text: &str) -> Result<Vec<VariantRow>, CatalogError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(CatalogError::Csv {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(CatalogError::Csv {
                line: 1,
                message: "expected name,accuracy,memory_mb and at least one fps column".into(),
            });
        }
        let hw_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(CatalogError::Csv {
                    line: idx + 1,
                    message: format!("expected {} fields, got {}", cols.len(), fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, CatalogError> {
                s.parse::<f64>().map_err(|_| CatalogError::Csv {
                    line: idx + 1,
                    message: format!("bad {what}: {s}"),
                })
            };
            let mut fps = HashMap::new();
            for (hw, field) in hw_names.iter().zip(&fields[3..]) {
                fps.insert(hw.clone(), parse(field, "fps")?);
            }
            rows.push(VariantRow {
                name: fields[0].to_string(),
                accuracy_pct: parse(fields[1], "accuracy")?,
                memory_mb: parse(fields[2], "memory")?,
                fps,
            });
        }
        Ok(rows)
    }

    /// The YOLOv4 variant table profiled on Titan RTX and GTX 980.
    pub fn yolov4_rows() -> Vec<VariantRow> {
        let data: [(&str, f64, f64, f64, f64); 10] = [
            ("608p", 65.7, 1577.0, 41.7, 14.2),
            ("512p", 64.9, 1185.0, 55.5, 18.9),
            ("416p", 62.8, 1009.0, 73.8, 25.1),
            ("320p", 57.3, 805.0, 100.0, 34.1),
            ("3.99pruned", 55.1, 395.0, 209.0, 71.0),
            ("8.09pruned", 51.4, 195.0, 329.0, 112.0),
            ("10.10pruned", 50.9, 156.0, 371.0, 126.0),
            ("14.02pruned", 49.0, 112.0, 488.0, 166.0),
            ("tiny-416p", 38.7, 187.0, 888.0, 302.0),
            ("tiny-288p", 34.4, 160.0, 1272.0, 433.0),
        ];
        data.iter()
            .map(|&(name, acc, mem, titan, gtx)| VariantRow {
                name: name.to_string(),
                accuracy_pct: acc,
                memory_mb: mem,
                fps: HashMap::from([
                    ("titan_rtx".to_string(), titan),
                    ("gtx_980".to_string(), gtx),
                ]),
            })
            .collect()
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    /// Accuracy of model `m` as a fraction in [0, 1].
    pub fn accuracy(&self, m: usize) -> f64 {
        self.variants[self.models[m].variant].accuracy_pct / 100.0
    }

    pub fn size_mb(&self, m: usize) -> f64 {
        self.variants[self.models[m].variant].memory_mb
    }

    pub fn task_of(&self, m: usize) -> usize {
        self.models[m].task
    }

    fn fps(&self, m: usize, hardware: &str) -> Result<f64, CatalogError> {
        self.variants[self.models[m].variant]
            .fps
            .get(hardware)
            .copied()
            .ok_or_else(|| CatalogError::MissingHardware(hardware.to_string()))
    }

    /// Average inference delay of model `m` on the given hardware, in ms.
    pub fn delay_ms(&self, m: usize, hardware: &str) -> Result<f64, CatalogError> {
        Ok(1000.0 / self.fps(m, hardware)?)
    }

    /// Per-slot capacity of model `m` on the given hardware: requests the
    /// model can serve in one slot, floored to an integer.
    pub fn capacity(&self, m: usize, hardware: &str) -> Result<u64, CatalogError> {
        Ok((self.fps(m, hardware)? * self.slot_secs).floor() as u64)
    }

    /// Model ids belonging to task `i` (a contiguous range by construction).
    pub fn models_of_task(&self, task: usize) -> std::ops::Range<usize> {
        let per_task = self.variants.len() * self.replicas;
        task * per_task..(task + 1) * per_task
    }

    /// Total size of the whole catalog on one node, in MB.
    pub fn total_size_mb(&self) -> f64 {
        self.models
            .iter()
            .map(|mv| self.variants[mv.variant].memory_mb)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_catalog() -> Catalog {
        Catalog::load(Catalog::yolov4_rows(), 2, 3, 60.0).unwrap()
    }

    #[test]
    fn derived_delay_and_capacity() {
        let cat = table_catalog();
        // model 0 = task 0, variant 608p, replica 0
        assert_eq!(cat.accuracy(0), 0.657);
        assert_eq!(cat.size_mb(0), 1577.0);
        let d = cat.delay_ms(0, "titan_rtx").unwrap();
        assert!((d - 23.9808153477218).abs() < 1e-10);
        assert_eq!(cat.capacity(0, "titan_rtx").unwrap(), 2502);
        // tiny-288p is the last variant of task 0
        let tiny = 9 * 3; // variant 9, replica 0
        assert_eq!(cat.accuracy(tiny), 0.344);
        let d = cat.delay_ms(tiny, "titan_rtx").unwrap();
        assert!((d - 0.786163522012579).abs() < 1e-12);
    }

    #[test]
    fn delay_decreases_as_fps_increases() {
        let cat = table_catalog();
        // variants are listed by decreasing complexity: fps grows, delay shrinks
        let mut prev = f64::INFINITY;
        for variant in 0..cat.variants.len() {
            let m = variant * cat.replicas;
            let d = cat.delay_ms(m, "gtx_980").unwrap();
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn task_model_sets_are_disjoint() {
        let cat = table_catalog();
        assert_eq!(cat.n_models(), 2 * 10 * 3);
        let r0 = cat.models_of_task(0);
        let r1 = cat.models_of_task(1);
        assert!(r0.end <= r1.start);
        for m in r0 {
            assert_eq!(cat.task_of(m), 0);
        }
    }

    #[test]
    fn rejects_zero_fps() {
        let mut rows = Catalog::yolov4_rows();
        rows[0].fps.insert("titan_rtx".into(), 0.0);
        assert!(matches!(
            Catalog::load(rows, 1, 1, 60.0),
            Err(CatalogError::NonPositiveFps { .. })
        ));
    }

    #[test]
    fn missing_hardware_class_is_an_error() {
        let cat = table_catalog();
        assert!(matches!(
            cat.delay_ms(0, "tpu_v9"),
            Err(CatalogError::MissingHardware(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let text = "name,accuracy,memory_mb,titan_rtx,gtx_980\n608p,65.7,1577,41.7,14.2\n";
        let rows = Catalog::rows_from_csv(text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].fps["gtx_980"], 14.2);
        let bad = Catalog::rows_from_csv("name,accuracy,memory_mb,hw\nx,1,2\n");
        assert!(matches!(bad, Err(CatalogError::Csv { line: 2, .. })));
    }
}
