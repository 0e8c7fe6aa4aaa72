#include "tempo/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tempo {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0) || !std::isfinite(eps_low)) {
    throw std::invalid_argument("eps_low must be positive and finite");
  }
  if (!(eps_high > 0.0) || !std::isfinite(eps_high)) {
    throw std::invalid_argument("eps_high must be positive and finite");
  }
}

SurrogateReport clipped_surrogate(const AdvantageMatrix& advantages,
                                  const std::vector<std::vector<double>>& old_logprobs,
                                  const std::vector<std::vector<double>>& new_logprobs,
                                  const ClipConfig& config, bool with_coefficients) {
  config.validate();
  const auto& rows = advantages.per_rollout;
  if (old_logprobs.size() != rows.size() || new_logprobs.size() != rows.size()) {
    throw std::invalid_argument("shape mismatch");
  }
  const double low = 1.0 - config.eps_low;
  const double high = 1.0 + config.eps_high;

  SurrogateReport report;
  if (with_coefficients) {
    report.per_token_coeff.emplace();
    report.per_token_coeff->reserve(rows.size());
  }
  double total = 0.0;
  std::int64_t clipped = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (old_logprobs[i].size() != rows[i].size() || new_logprobs[i].size() != rows[i].size()) {
      throw std::invalid_argument("shape mismatch");
    }
    std::vector<double> coeff_row;
    if (with_coefficients) {
      coeff_row.reserve(rows[i].size());
    }
    for (std::size_t t = 0; t < rows[i].size(); ++t) {
      const double ratio = std::exp(new_logprobs[i][t] - old_logprobs[i][t]);
      if (!std::isfinite(ratio)) {
        throw std::runtime_error("ratio overflow");
      }
      const double advantage = rows[i][t];
      const double unclipped = ratio * advantage;
      const double clamped = std::clamp(ratio, low, high) * advantage;
      total += std::min(unclipped, clamped);
      const bool clipped_strictly = clamped < unclipped;  // ties count as unclipped
      if (clipped_strictly) {
        ++clipped;
      }
      if (with_coefficients) {
        coeff_row.push_back(clipped_strictly ? 0.0 : unclipped);
      }
      ++report.token_count;
    }
    if (with_coefficients) {
      report.per_token_coeff->push_back(std::move(coeff_row));
    }
  }
  if (report.token_count > 0) {
    report.objective = total / static_cast<double>(report.token_count);
    report.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(report.token_count);
  }
  return report;
}

}  // namespace tempo
