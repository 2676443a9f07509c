//! Paper-savings arithmetic: pages per course, campus totals and the
//! page/ream/tree conversions. Everything is exact until the final rounding.

use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::pidctl::DeliveryReport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("heavy fraction {0} is outside [0, 1]")]
    FractionOutOfRange(Ratio<u64>),
    #[error("{instructors} x {fraction} is not a whole number of instructors")]
    NonIntegralInstructors {
        instructors: u64,
        fraction: Ratio<u64>,
    },
    #[error("arithmetic overflow")]
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CourseUsage {
    pub students: u64,
    pub pages_per_student_week: u64,
    pub weeks: u64,
}

impl CourseUsage {
    pub fn new(students: u64, pages_per_student_week: u64, weeks: u64) -> Self {
        Self {
            students,
            pages_per_student_week,
            weeks,
        }
    }
}

/// 8,300 pages = 16 reams = 1 tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PaperConversion {
    pub pages_per_tree: u64,
    pub reams_per_tree: u64,
}

impl Default for PaperConversion {
    fn default() -> Self {
        Self {
            pages_per_tree: 8300,
            reams_per_tree: 16,
        }
    }
}

impl PaperConversion {
    pub fn pages_per_ream(&self) -> Ratio<u64> {
        Ratio::new(self.pages_per_tree, self.reams_per_tree)
    }
}

/// Rounds a non-negative rational to the nearest integer, halves away from zero.
pub fn round_half_away(value: Ratio<u128>) -> u128 {
    let (n, d) = (*value.numer(), *value.denom());
    (2 * n + d) / (2 * d)
}

pub fn pages_per_course(u: &CourseUsage) -> u64 {
    u.students * u.pages_per_student_week * u.weeks
}

pub fn campus_pages(
    instructors: u64,
    heavy_fraction: Ratio<u64>,
    pages_per_heavy_instructor: u64,
) -> Result<u64, MetricsError> {
    if heavy_fraction > Ratio::from_integer(1) {
        return Err(MetricsError::FractionOutOfRange(heavy_fraction));
    }
    let scaled = u128::from(instructors) * u128::from(*heavy_fraction.numer());
    let denom = u128::from(*heavy_fraction.denom());
    if scaled % denom != 0 {
        return Err(MetricsError::NonIntegralInstructors {
            instructors,
            fraction: heavy_fraction,
        });
    }
    let total = (scaled / denom) * u128::from(pages_per_heavy_instructor);
    u64::try_from(total).map_err(|_| MetricsError::Overflow)
}

pub fn pages_to_reams(pages: u64, c: &PaperConversion) -> u64 {
    let exact = Ratio::new(
        u128::from(pages) * u128::from(c.reams_per_tree),
        u128::from(c.pages_per_tree),
    );
    round_half_away(exact) as u64
}

pub fn pages_to_trees(pages: u64, c: &PaperConversion) -> u64 {
    round_half_away(Ratio::new(u128::from(pages), u128::from(c.pages_per_tree))) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SavingsSummary {
    pub delivered: u64,
    pub usage: CourseUsage,
    pub conversion: PaperConversion,
    pub pages: u64,
    pub reams: u64,
    pub trees: u64,
}

impl SavingsSummary {
    pub fn from_pages(
        pages: u64,
        delivered: u64,
        usage: CourseUsage,
        conversion: PaperConversion,
    ) -> Self {
        Self {
            delivered,
            usage,
            conversion,
            pages,
            reams: pages_to_reams(pages, &conversion),
            trees: pages_to_trees(pages, &conversion),
        }
    }
}

impl fmt::Display for SavingsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "savings delivered={} pages_per_student_week={} weeks={} pages_per_tree={} reams_per_tree={}",
            self.delivered,
            self.usage.pages_per_student_week,
            self.usage.weeks,
            self.conversion.pages_per_tree,
            self.conversion.reams_per_tree
        )?;
        writeln!(f, "pages={}", self.pages)?;
        writeln!(f, "reams={}", self.reams)?;
        writeln!(f, "trees={}", self.trees)
    }
}

/// Pages not printed because `report` delivered them electronically.
pub fn savings_report(
    report: &DeliveryReport,
    u: &CourseUsage,
    c: &PaperConversion,
) -> SavingsSummary {
    savings_for_delivered(report.totals.delivered as u64, u, c)
}

pub fn savings_for_delivered(
    delivered: u64,
    u: &CourseUsage,
    c: &PaperConversion,
) -> SavingsSummary {
    let pages = delivered * u.pages_per_student_week * u.weeks;
    SavingsSummary::from_pages(pages, delivered, *u, *c)
}
