//! SVG line charts with an on-disk cache.
//!
//! Each chart file starts with a generation stamp comment holding the index
//! of the newest archive bucket it was drawn from. A request is served from
//! disk unless the archive has a newer bucket than the stamp.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use super::rra::{Bucket, RoundRobinArchive};
use super::stats::{compute_stats, ChartStats, StatsError};
use crate::model::ProbeId;

const STAMP_PREFIX: &str = "<!-- generation-stamp: ";
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 90.0;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("unknown probe {0}")]
    NotFound(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("chart cache: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutcome {
    pub path: PathBuf,
    pub regenerated: bool,
    pub stats: ChartStats,
}

/// Renders the SVG document for `buckets`.
pub fn render_svg(
    probe: &ProbeId,
    buckets: &[Bucket],
    step_s: f64,
    stats: &ChartStats,
    stamp: i64,
) -> String {
    let mut svg = String::with_capacity(4096 + buckets.len() * 16);
    let _ = writeln!(svg, "{STAMP_PREFIX}{stamp} -->");
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_LEFT}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(&probe.topic())
    );

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let t0 = buckets.first().map(|b| b.start).unwrap_or(0.0);
    let t1 = buckets.last().map(|b| b.start + step_s).unwrap_or(1.0);
    let y_max = if stats.max_w > 0.0 { stats.max_w * 1.1 } else { 1.0 };
    let x_of = |t: f64| MARGIN_LEFT + (t - t0) / (t1 - t0).max(f64::MIN_POSITIVE) * plot_w;
    let y_of = |w: f64| MARGIN_TOP + plot_h - w / y_max * plot_h;

    // Axes and labels.
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN_LEFT} {MARGIN_TOP} V{} H{}" stroke="black" fill="none"/>"#,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    );
    for frac in [0.0, 0.5, 1.0] {
        let w = y_max * frac;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{:.0} W</text>"#,
            MARGIN_LEFT - 4.0,
            y_of(w) + 3.0,
            w
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_LEFT}" y="{:.1}" font-family="sans-serif" font-size="10">{}</text>"#,
        MARGIN_TOP + plot_h + 14.0,
        utc_label(t0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h + 14.0,
        utc_label(t1)
    );

    // One polyline per run of present buckets; absent buckets break the line.
    let mut run: Vec<(f64, f64)> = Vec::new();
    let flush = |run: &mut Vec<(f64, f64)>, svg: &mut String| {
        if run.is_empty() {
            return;
        }
        let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" stroke="#1f77b4" stroke-width="1.5" fill="none"/>"##,
            pts.join(" ")
        );
        run.clear();
    };
    for b in buckets {
        match b.value {
            Some(w) => run.push((x_of(b.start + step_s / 2.0), y_of(w))),
            None => flush(&mut run, &mut svg),
        }
    }
    flush(&mut run, &mut svg);

    let legend_y = MARGIN_TOP + plot_h + 36.0;
    let _ = writeln!(
        svg,
        r#"<g id="legend" data-avg-w="{}" data-min-w="{}" data-max-w="{}" data-last-w="{}" data-total-kwh="{}" data-cost-eur="{}" font-family="sans-serif" font-size="11">"#,
        stats.avg_w, stats.min_w, stats.max_w, stats.last_w, stats.total_kwh, stats.cost_eur
    );
    let lines = [
        format!(
            "avg {:.2} W   min {:.2} W   max {:.2} W   last {:.2} W",
            stats.avg_w, stats.min_w, stats.max_w, stats.last_w
        ),
        format!(
            "total {:.4} kWh   cost {:.2} EUR",
            stats.total_kwh, stats.cost_eur
        ),
    ];
    for (i, line) in lines.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN_LEFT}" y="{:.1}">{}</text>"#,
            legend_y + 16.0 * i as f64,
            line
        );
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `YYYY-MM-DD HH:MM:SS UTC` for an epoch timestamp.
fn utc_label(t: f64) -> String {
    let secs = t.floor() as i64;
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400);
    // Civil-from-days (proleptic Gregorian).
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!(
        "{year:04}-{month:02}-{day:02} {:02}:{:02}:{:02} UTC",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

/// Reads the generation stamp from the first line of a cached chart.
pub fn read_stamp(path: &Path) -> Option<i64> {
    let f = std::fs::File::open(path).ok()?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).ok()?;
    line.trim()
        .strip_prefix(STAMP_PREFIX)?
        .strip_suffix("-->")?
        .trim()
        .parse()
        .ok()
}

/// Directory of rendered charts, regenerated only when out of date.
pub struct ChartCache {
    dir: PathBuf,
    regenerations: AtomicU64,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ChartCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ChartCache {
            dir: dir.into(),
            regenerations: AtomicU64::new(0),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of charts drawn so far (cache misses).
    pub fn regenerations(&self) -> u64 {
        self.regenerations.load(Ordering::Relaxed)
    }

    fn file_name(probe: &ProbeId, step_s: f64, range: Option<(f64, f64)>) -> String {
        let range = match range {
            Some((a, b)) => format!("{a}-{b}"),
            None => "all".into(),
        };
        format!("{}_{}_{step_s}s_{range}.svg", probe.site(), probe.name())
    }

    /// Returns the chart for `range` (or the whole retention), drawing it
    /// only if the archive has a bucket newer than the cached file.
    pub fn render(
        &self,
        probe: &ProbeId,
        archive: &RoundRobinArchive,
        range: Option<(f64, f64)>,
        price_eur_per_kwh: f64,
    ) -> Result<RenderOutcome, ChartError> {
        let buckets = match range {
            Some((from, to)) => archive.fetch(from, to),
            None => archive.buckets(),
        };
        let stats = compute_stats(&buckets, archive.step_s(), price_eur_per_kwh)?;
        let stamp = archive.newest_index().unwrap_or(i64::MIN);
        let name = Self::file_name(probe, archive.step_s(), range);
        let path = self.dir.join(&name);

        // Serialize renders per probe.
        let lock = {
            let key = probe.topic();
            Arc::clone(self.locks.lock().entry(key).or_default())
        };
        let _guard = lock.lock();

        if read_stamp(&path).is_some_and(|s| s >= stamp) {
            return Ok(RenderOutcome {
                path,
                regenerated: false,
                stats,
            });
        }
        std::fs::create_dir_all(&self.dir)?;
        let svg = render_svg(probe, &buckets, archive.step_s(), &stats, stamp);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, svg)?;
        std::fs::rename(&tmp, &path)?;
        self.regenerations.fetch_add(1, Ordering::Relaxed);
        Ok(RenderOutcome {
            path,
            regenerated: true,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viz::rra::{ArchiveSpec, Consolidation};

    #[test]
    fn utc_labels() {
        assert_eq!(utc_label(0.0), "1970-01-01 00:00:00 UTC");
        assert_eq!(utc_label(1_700_000_000.0), "2023-11-14 22:13:20 UTC");
        assert_eq!(utc_label(951_782_400.0), "2000-02-29 00:00:00 UTC");
    }

    #[test]
    fn gaps_split_polylines() {
        let probe: ProbeId = "s/p".parse().unwrap();
        let buckets = vec![
            Bucket { start: 0.0, value: Some(1.0) },
            Bucket { start: 1.0, value: Some(2.0) },
            Bucket { start: 2.0, value: None },
            Bucket { start: 3.0, value: Some(3.0) },
        ];
        let stats = compute_stats(&buckets, 1.0, 0.1).unwrap();
        let svg = render_svg(&probe, &buckets, 1.0, &stats, 3);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<!-- generation-stamp: 3 -->"));
    }

    #[test]
    fn cache_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ChartCache::new(dir.path());
        let probe: ProbeId = "s/p".parse().unwrap();
        let mut a = RoundRobinArchive::new(ArchiveSpec::new(1.0, 10, Consolidation::Average).unwrap());
        a.update(100.0, 5.0);

        let first = cache.render(&probe, &a, None, 0.1).unwrap();
        assert!(first.regenerated);
        let bytes = std::fs::read(&first.path).unwrap();
        let second = cache.render(&probe, &a, None, 0.1).unwrap();
        assert!(!second.regenerated);
        assert_eq!(std::fs::read(&second.path).unwrap(), bytes);
        assert_eq!(cache.regenerations(), 1);

        a.update(101.0, 6.0);
        assert!(cache.render(&probe, &a, None, 0.1).unwrap().regenerated);
        assert_eq!(cache.regenerations(), 2);
    }

    #[test]
    fn empty_archive_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ChartCache::new(dir.path());
        let a = RoundRobinArchive::new(ArchiveSpec::new(1.0, 10, Consolidation::Average).unwrap());
        assert!(matches!(
            cache.render(&"s/p".parse().unwrap(), &a, None, 0.1),
            Err(ChartError::Stats(StatsError::EmptyRange))
        ));
    }
}
