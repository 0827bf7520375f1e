//! Minimal CSV field escaping for the emitted reports.

/// Quote a field when it contains commas, quotes, or line breaks; inner
/// quotes are doubled.
pub fn csv_escape(field: &str) -> String {
    if field
        .chars()
        .any(|c| c == ',' || c == '"' || c == '\n' || c == '\r')
        || field.starts_with(' ')
        || field.ends_with(' ')
    {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
