//! JSON-lines logger. Records carry level, target and message only, so two
//! runs of the same command produce the same log.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};

struct JsonLogger {
    sink: Mutex<Box<dyn Write + Send>>,
    level: Level,
}

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "level": record.level().as_str(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        if let Ok(mut sink) = self.sink.lock() {
            // A failing log sink must not abort the computation.
            let _ = writeln!(sink, "{line}");
        }
    }

    fn flush(&self) {
        if let Ok(mut sink) = self.sink.lock() {
            let _ = sink.flush();
        }
    }
}

/// Installs the logger, writing to `path` or to stderr.
pub fn init(path: Option<&Path>) -> io::Result<()> {
    let sink: Box<dyn Write + Send> = match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(File::create(p)?)
        }
        None => Box::new(io::stderr()),
    };
    let logger = JsonLogger {
        sink: Mutex::new(sink),
        level: Level::Info,
    };
    if log::set_boxed_logger(Box::new(logger)).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
    Ok(())
}
