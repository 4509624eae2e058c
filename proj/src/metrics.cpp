#include "dceiflow/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dceiflow {

namespace {

void check_sizes(const FlowField& pred, const FlowField& gt, const BinaryMask& mask) {
  if (pred.width() != gt.width() || pred.height() != gt.height() || mask.width != gt.width() ||
      mask.height != gt.height()) {
    throw std::invalid_argument("metrics: prediction " + std::to_string(pred.width()) + "x" +
                                std::to_string(pred.height()) + ", ground truth " + std::to_string(gt.width()) + "x" +
                                std::to_string(gt.height()) + ", mask " + std::to_string(mask.width) + "x" +
                                std::to_string(mask.height));
  }
}

double endpoint_error(const FlowField& pred, const FlowField& gt, std::size_t i) {
  const double du = static_cast<double>(pred.u.values[i]) - gt.u.values[i];
  const double dv = static_cast<double>(pred.v.values[i]) - gt.v.values[i];
  return std::sqrt(du * du + dv * dv);
}

std::size_t selected(const FlowField& gt, const BinaryMask& mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) n += (mask.values[i] && gt.valid.values[i]) ? 1 : 0;
  return n;
}

}  // namespace

double epe(const FlowField& pred, const FlowField& gt, const BinaryMask& mask) {
  check_sizes(pred, gt, mask);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.values[i] || !gt.valid.values[i]) continue;
    total += endpoint_error(pred, gt, i);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("epe: no pixel is both masked and valid");
  return total / static_cast<double>(n);
}

double epe(const FlowField& pred, const FlowField& gt) {
  return epe(pred, gt, BinaryMask(gt.width(), gt.height(), 1));
}

double outlier_pct(const FlowField& pred, const FlowField& gt, const BinaryMask& mask) {
  check_sizes(pred, gt, mask);
  std::size_t outliers = 0, n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.values[i] || !gt.valid.values[i]) continue;
    const double err = endpoint_error(pred, gt, i);
    const double mag = std::hypot(static_cast<double>(gt.u.values[i]), static_cast<double>(gt.v.values[i]));
    if (err > 3.0 && err > 0.05 * mag) ++outliers;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("outlier_pct: no pixel is both masked and valid");
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

double dense_ratio(double epe_dense, double epe_masked, double epe_excluded) {
  const double denominator = epe_dense + epe_excluded;
  if (denominator == 0.0) throw std::invalid_argument("dense_ratio: EPE_dense + EPE_excluded is zero");
  return (epe_dense + epe_masked) / denominator;
}

MetricsReport evaluate(const FlowField& pred, const FlowField& gt, const BinaryMask& event_mask) {
  check_sizes(pred, gt, event_mask);
  const BinaryMask all(gt.width(), gt.height(), 1);
  const BinaryMask excluded = mask_not(event_mask);
  MetricsReport r;
  r.n_dense = selected(gt, all);
  r.n_masked = selected(gt, event_mask);
  r.n_excluded = selected(gt, excluded);
  if (r.n_dense > 0) {
    r.epe_dense = epe(pred, gt, all);
    r.out_dense = outlier_pct(pred, gt, all);
  }
  if (r.n_masked > 0) {
    r.epe_masked = epe(pred, gt, event_mask);
    r.out_masked = outlier_pct(pred, gt, event_mask);
  }
  if (r.n_excluded > 0) {
    r.epe_excluded = epe(pred, gt, excluded);
    r.out_excluded = outlier_pct(pred, gt, excluded);
  }
  if (r.epe_dense && r.epe_masked && r.epe_excluded && *r.epe_dense + *r.epe_excluded > 0.0) {
    r.dense_ratio = dense_ratio(*r.epe_dense, *r.epe_masked, *r.epe_excluded);
  }
  return r;
}

std::string metrics_csv_header() {
  return "epe_dense,epe_masked,epe_excluded,out_dense,out_masked,out_excluded,dense_ratio,n_dense,n_masked,n_excluded";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  auto put = [&os](const std::optional<double>& v) {
    if (v) {
      os << *v;
    } else {
      os << "nan";
    }
    os << ',';
  };
  put(r.epe_dense);
  put(r.epe_masked);
  put(r.epe_excluded);
  put(r.out_dense);
  put(r.out_masked);
  put(r.out_excluded);
  put(r.dense_ratio);
  os << r.n_dense << ',' << r.n_masked << ',' << r.n_excluded;
  return os.str();
}

}  // namespace dceiflow
