use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DistanceClass, ExperimentMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub interval_id: String,
    pub experiment_id: String,
    pub site: String,
    pub tx_model: String,
    pub rx_model: String,
    pub tx_power: String,
    pub carriage: String,
    pub distance_m: f64,
    pub window_s: f64,
}

impl ManifestRecord {
    pub fn meta(&self) -> ExperimentMeta {
        ExperimentMeta {
            experiment_id: self.experiment_id.clone(),
            site: self.site.clone(),
            tx_model: self.tx_model.clone(),
            rx_model: self.rx_model.clone(),
            tx_power: self.tx_power.clone(),
            carriage: self.carriage.clone(),
        }
    }

    pub fn label(&self) -> Result<DistanceClass> {
        DistanceClass::from_label_meters(self.distance_m).ok_or_else(|| {
            Error::Manifest(format!(
                "interval `{}`: distance {} m is not one of 1.2, 1.8, 3.0, 4.5",
                self.interval_id, self.distance_m
            ))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.interval_id.is_empty() {
                return Err(Error::Manifest(format!("row {}: empty interval_id", i + 1)));
            }
            r.label()?;
            if !(r.window_s.is_finite() && r.window_s > 0.0) {
                return Err(Error::Manifest(format!(
                    "interval `{}`: window_s must be positive, got {}",
                    r.interval_id, r.window_s
                )));
            }
            if index.insert(r.interval_id.clone(), i).is_some() {
                return Err(Error::Manifest(format!(
                    "duplicate interval_id `{}`",
                    r.interval_id
                )));
            }
        }
        Ok(Self { records, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let records = reader
            .deserialize()
            .enumerate()
            .map(|(i, row)| {
                row.map_err(|e| Error::Manifest(format!("row {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        Self::new(records)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            writer
                .serialize(r)
                .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Manifest(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn get(&self, interval_id: &str) -> Option<&ManifestRecord> {
        self.index.get(interval_id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "interval_id,experiment_id,site,tx_model,rx_model,tx_power,carriage,distance_m,window_s\n";

    #[test]
    fn parses_and_indexes() {
        let m = Manifest::parse(&format!(
            "{HEADER}a,e1,mitre,pixel,iphone,low,pocket,3.0,4\nb,e1,mitre,pixel,iphone,low,pocket,4.50,4.0\n"
        ))
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("b").unwrap().label().unwrap(), DistanceClass::D4_5);
        assert!(m.get("c").is_none());
        let again = Manifest::parse(&m.to_csv().unwrap()).unwrap();
        assert_eq!(again.records, m.records);
    }

    #[test]
    fn rejects_bad_rows() {
        let dup = format!("{HEADER}a,e,s,x,x,p,c,1.2,4\na,e,s,x,x,p,c,1.2,4\n");
        assert!(matches!(Manifest::parse(&dup), Err(Error::Manifest(m)) if m.contains("duplicate")));
        let dist = format!("{HEADER}a,e,s,x,x,p,c,2.0,4\n");
        assert!(Manifest::parse(&dist).is_err());
        let win = format!("{HEADER}a,e,s,x,x,p,c,1.2,0\n");
        assert!(Manifest::parse(&win).is_err());
        let short = format!("{HEADER}a,e,s\n");
        assert!(Manifest::parse(&short).is_err());
    }
}
