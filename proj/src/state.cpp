#include "saef/state.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saef {

std::string_view to_string(FeedbackMode mode) {
  switch (mode) {
    case FeedbackMode::vanilla: return "vanilla";
    case FeedbackMode::ef: return "ef";
    case FeedbackMode::saef: return "saef";
  }
  return "?";
}

std::string_view to_string(CompressionMode mode) {
  return mode == CompressionMode::single_way ? "single_way" : "double_way";
}

std::string_view to_string(AveragingScope scope) {
  return scope == AveragingScope::saef_only ? "saef_only" : "both";
}

FeedbackMode parse_feedback_mode(std::string_view name) {
  if (name == "vanilla") return FeedbackMode::vanilla;
  if (name == "ef") return FeedbackMode::ef;
  if (name == "saef") return FeedbackMode::saef;
  throw std::invalid_argument("unknown feedback mode '" + std::string(name) + "'");
}

CompressionMode parse_compression_mode(std::string_view name) {
  if (name == "single_way") return CompressionMode::single_way;
  if (name == "double_way") return CompressionMode::double_way;
  throw std::invalid_argument("unknown compression mode '" + std::string(name) + "'");
}

AveragingScope parse_averaging_scope(std::string_view name) {
  if (name == "saef_only") return AveragingScope::saef_only;
  if (name == "both") return AveragingScope::both;
  throw std::invalid_argument("unknown averaging scope '" + std::string(name) + "'");
}

LrSchedule::LrSchedule(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
  if (pieces_.empty()) throw std::invalid_argument("learning-rate schedule is empty");
  if (pieces_.front().start != 0)
    throw std::invalid_argument("learning-rate schedule must start at iteration 0");
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!(pieces_[i].eta > 0.0) || !std::isfinite(pieces_[i].eta))
      throw std::invalid_argument("learning rate must be positive and finite");
    if (i > 0 && pieces_[i].start <= pieces_[i - 1].start)
      throw std::invalid_argument("learning-rate schedule starts must be strictly increasing");
  }
}

double LrSchedule::at(long t) const {
  double eta = pieces_.front().eta;
  for (const auto& p : pieces_) {
    if (p.start > t) break;
    eta = p.eta;
  }
  return eta;
}

double LrSchedule::max_eta() const {
  double best = 0.0;
  for (const auto& p : pieces_) best = std::max(best, p.eta);
  return best;
}

void RunConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  // Re-run the schedule checks in case pieces were built elsewhere.
  LrSchedule check(lr.pieces());
  (void)check;
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  compressor.validate();
  if (feedback == FeedbackMode::vanilla && compressor.kind != CompressorKind::identity)
    throw std::invalid_argument("vanilla mode requires the identity compressor");
  if (averaging_period && *averaging_period < 1)
    throw std::invalid_argument("averaging period must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (diag_every < 0) throw std::invalid_argument("diag_every must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (!(init_perturbation >= 0.0) || !std::isfinite(init_perturbation))
    throw std::invalid_argument("init perturbation must be finite and >= 0");
}

bool RunConfig::averages_at(long t) const {
  if (!averaging_period) return false;
  if ((t + 1) % *averaging_period != 0) return false;
  switch (feedback) {
    case FeedbackMode::saef: return true;
    case FeedbackMode::ef: return averaging_scope == AveragingScope::both;
    case FeedbackMode::vanilla: return false;
  }
  return false;
}

}  // namespace saef
