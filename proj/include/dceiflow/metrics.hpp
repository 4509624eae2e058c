#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/grid.hpp"

namespace dceiflow {

/// Mean endpoint error over pixels set in both mask and gt.valid.
/// Throws std::invalid_argument on a size mismatch or an empty selection.
double epe(const FlowField& pred, const FlowField& gt, const BinaryMask& mask);
double epe(const FlowField& pred, const FlowField& gt);

/// Percentage of selected pixels whose error exceeds 3 px and 5% of |gt|.
double outlier_pct(const FlowField& pred, const FlowField& gt, const BinaryMask& mask);

/// (dense + masked) / (dense + excluded); throws on a zero denominator.
double dense_ratio(double epe_dense, double epe_masked, double epe_excluded);

/// Dense, event-masked and event-excluded metrics. Entries whose selection
/// is empty stay unset.
struct MetricsReport {
  std::optional<double> epe_dense;
  std::optional<double> epe_masked;
  std::optional<double> epe_excluded;
  std::optional<double> out_dense;
  std::optional<double> out_masked;
  std::optional<double> out_excluded;
  std::optional<double> dense_ratio;
  std::size_t n_dense = 0;
  std::size_t n_masked = 0;
  std::size_t n_excluded = 0;
};

MetricsReport evaluate(const FlowField& pred, const FlowField& gt, const BinaryMask& event_mask);

/// Header line and one row per report; unset values are written as "nan".
/// Numbers use 17 significant digits so they read back exactly.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);

}  // namespace dceiflow
