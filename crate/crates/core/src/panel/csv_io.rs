use std::io::{Read, Write};
use std::path::Path;

use super::{
    EmploymentState, InformalSubtype, LoanType, ObservationRow, PanelDataset, PanelError, PayType, Sector,
    BINARY_COLUMNS, INTEGER_COLUMNS, NUMERIC_COLUMNS,
};

pub const SCHEMA_COLUMNS: [&str; 29] = [
    "person_id",
    "year",
    "state",
    "informal_subtype",
    "pay_type",
    "age",
    "female",
    "russian",
    "parent_educ",
    "school_years",
    "married",
    "hh_size",
    "kids",
    "log_consumption",
    "pop_log",
    "urban",
    "district",
    "interval_days",
    "cma_index",
    "bank_presence",
    "dist_sber_km",
    "dist_other_km",
    "offices_per_1000",
    "loan_taken",
    "loan_intent",
    "rel_earn_17",
    "govt_share",
    "informal_share",
    "soe_closed",
];

/// Optional trailing columns: household and community identifiers, earnings
/// (head-of-household rule) and loan type (multinomial loan model).
pub const EXTENSION_COLUMNS: [&str; 4] = ["household_id", "community_id", "earnings", "loan_type"];

fn type_error(line: u64, column: &str, message: impl Into<String>) -> PanelError {
    PanelError::TypeError { line, column: column.to_string(), message: message.into() }
}

fn parse_f64(line: u64, column: &str, s: &str) -> Result<Option<f64>, PanelError> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| type_error(line, column, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(type_error(line, column, "non-finite value"));
    }
    Ok(Some(v))
}

fn parse_id(line: u64, column: &str, s: &str) -> Result<u64, PanelError> {
    s.parse().map_err(|_| type_error(line, column, format!("`{s}` is not a non-negative integer id")))
}

fn parse_state(line: u64, state: &str, sub: &str, pay: &str) -> Result<Option<EmploymentState>, PanelError> {
    let sector = match state {
        "" => {
            if !sub.is_empty() || !pay.is_empty() {
                return Err(type_error(line, "state", "subtype or pay type given without a state"));
            }
            return Ok(None);
        }
        "F" => Sector::Formal,
        "I" => Sector::Informal,
        "O" => Sector::NoJob,
        other => return Err(type_error(line, "state", format!("unknown state `{other}`"))),
    };
    let subtype = match sub {
        "" => None,
        "UE" => Some(InformalSubtype::UnregisteredEmployee),
        "SE" => Some(InformalSubtype::SelfEmployed),
        "PP" => Some(InformalSubtype::PrivatePerson),
        "IEA" => Some(InformalSubtype::Iea),
        "UNK" => Some(InformalSubtype::Unknown),
        other => return Err(type_error(line, "informal_subtype", format!("unknown subtype `{other}`"))),
    };
    let pay_type = match pay {
        "" => None,
        "official" => Some(PayType::OfficialOnly),
        "partial" => Some(PayType::PartlyUnofficial),
        "unofficial" => Some(PayType::UnofficialOnly),
        "nojob" => Some(PayType::NoJob),
        other => return Err(type_error(line, "pay_type", format!("unknown pay type `{other}`"))),
    };
    EmploymentState::new(sector, subtype, pay_type).map(Some).map_err(|m| type_error(line, "state", m))
}

fn check_coding(line: u64, column: &str, v: f64) -> Result<(), PanelError> {
    if BINARY_COLUMNS.contains(&column) && v != 0.0 && v != 1.0 {
        return Err(type_error(line, column, "expected 0 or 1"));
    }
    if INTEGER_COLUMNS.contains(&column) && v.fract() != 0.0 {
        return Err(type_error(line, column, "expected an integer code"));
    }
    match column {
        "bank_presence" if !(1.0..=3.0).contains(&v) => Err(type_error(line, column, "expected 1, 2 or 3")),
        "dist_sber_km" | "dist_other_km" | "offices_per_1000" | "interval_days" | "hh_size" | "kids"
            if v < 0.0 =>
        {
            Err(type_error(line, column, "must be non-negative"))
        }
        _ => Ok(()),
    }
}

/// Reads the panel CSV schema. Column order in the header is free; unknown
/// columns are ignored.
pub fn load_panel<R: Read>(source: R) -> Result<PanelDataset, PanelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers().map_err(|e| PanelError::Io(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut schema_idx = [0usize; 29];
    for (k, name) in SCHEMA_COLUMNS.iter().enumerate() {
        schema_idx[k] = find(name).ok_or_else(|| PanelError::MissingColumn(name.to_string()))?;
    }
    let ext_idx: Vec<Option<usize>> = EXTENSION_COLUMNS.iter().map(|n| find(n)).collect();

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => type_error(p.line(), "", e.to_string()),
            None => PanelError::Io(e.to_string()),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(schema_idx[k]).unwrap_or("");
        let person_id = parse_id(line, "person_id", field(0))?;
        let year: i32 = field(1).parse().map_err(|_| type_error(line, "year", format!("`{}` is not a year", field(1))))?;
        let state = parse_state(line, field(2), field(3), field(4))?;
        let mut row = ObservationRow::new(person_id, year, state);
        for (k, name) in NUMERIC_COLUMNS.iter().enumerate() {
            let v = parse_f64(line, name, field(k + 5))?;
            if let Some(x) = v {
                check_coding(line, name, x)?;
            }
            row.values[k] = v;
        }
        let ext = |k: usize| ext_idx[k].and_then(|i| rec.get(i)).unwrap_or("");
        if !ext(0).is_empty() {
            row.household_id = Some(parse_id(line, "household_id", ext(0))?);
        }
        if !ext(1).is_empty() {
            row.community_id = Some(parse_id(line, "community_id", ext(1))?);
        }
        row.earnings = parse_f64(line, "earnings", ext(2))?;
        row.loan_type = match ext(3) {
            "" => None,
            "none" => Some(LoanType::None),
            "mortgage_auto" => Some(LoanType::MortgageAuto),
            "consumer" => Some(LoanType::Consumer),
            other => return Err(type_error(line, "loan_type", format!("unknown loan type `{other}`"))),
        };
        rows.push(row);
    }
    PanelDataset::from_rows(rows)
}

pub fn load_panel_path(path: &Path) -> Result<PanelDataset, PanelError> {
    let file = std::fs::File::open(path).map_err(|e| PanelError::Io(format!("{}: {e}", path.display())))?;
    load_panel(std::io::BufReader::new(file))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Canonical serialization: schema columns in schema order, followed by the
/// extension columns only when some row carries one of them.
pub fn write_panel<W: Write>(ds: &PanelDataset, sink: W) -> Result<(), PanelError> {
    let io = |e: csv::Error| PanelError::Io(e.to_string());
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let extended = ds
        .rows()
        .any(|r| r.household_id.is_some() || r.community_id.is_some() || r.earnings.is_some() || r.loan_type.is_some());
    let mut header: Vec<&str> = SCHEMA_COLUMNS.to_vec();
    if extended {
        header.extend_from_slice(&EXTENSION_COLUMNS);
    }
    w.write_record(&header).map_err(io)?;
    for r in ds.rows() {
        let (state, sub, pay) = match r.state {
            None => ("", "", ""),
            Some(s) => (
                match s.sector_of() {
                    Sector::Formal => "F",
                    Sector::Informal => "I",
                    Sector::NoJob => "O",
                },
                match s.subtype() {
                    None => "",
                    Some(InformalSubtype::UnregisteredEmployee) => "UE",
                    Some(InformalSubtype::SelfEmployed) => "SE",
                    Some(InformalSubtype::PrivatePerson) => "PP",
                    Some(InformalSubtype::Iea) => "IEA",
                    Some(InformalSubtype::Unknown) => "UNK",
                },
                match s.pay() {
                    None => "",
                    Some(PayType::OfficialOnly) => "official",
                    Some(PayType::PartlyUnofficial) => "partial",
                    Some(PayType::UnofficialOnly) => "unofficial",
                    Some(PayType::NoJob) => "nojob",
                },
            ),
        };
        let mut fields = vec![r.person_id.to_string(), r.year.to_string(), state.into(), sub.into(), pay.into()];
        fields.extend(r.values.iter().map(|v| fmt_opt(*v)));
        if extended {
            fields.push(r.household_id.map(|v| v.to_string()).unwrap_or_default());
            fields.push(r.community_id.map(|v| v.to_string()).unwrap_or_default());
            fields.push(fmt_opt(r.earnings));
            fields.push(r.loan_type.map(|t| t.label().to_string()).unwrap_or_default());
        }
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| PanelError::Io(e.to_string()))?;
    Ok(())
}
