#include "mosaic/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mosaic::nn {

GradcheckReport gradcheck(const ParamSet& params, const ScalarLoss& loss, const GradcheckOptions& options) {
  GradcheckReport report;
  const Gradients analytic = loss(params).second;
  ParamSet probe = params;
  for (const ParamEntry& e : params.entries()) {
    if (!is_trainable(e.role)) continue;
    const Matrix& g = analytic.at(e.name);
    for (Eigen::Index k = 0; k < e.value.size(); ++k) {
      const double original = e.value.data()[k];
      probe.mutable_at(e.name).data()[k] = original + options.step;
      const double up = loss(probe).first;
      probe.mutable_at(e.name).data()[k] = original - options.step;
      const double down = loss(probe).first;
      probe.mutable_at(e.name).data()[k] = original;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = g.data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_entry = e.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  report.pass = report.max_relative_error <= options.tolerance;
  return report;
}

GradcheckReport gradcheck(const ModelSpec& spec, const ScalarLoss& loss, std::uint64_t seed,
                          const GradcheckOptions& options) {
  Rng rng(seed);
  const ParamSet params = init_params(spec, rng);
  return gradcheck(params, loss, options);
}

}  // namespace mosaic::nn
