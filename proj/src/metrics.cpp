#include <json.hpp>

#include "gmlab/train.hpp"

namespace gmlab {

namespace {

nlohmann::json band_high(double hi) {
  if (std::isinf(hi)) return "inf";
  return hi;
}

}  // namespace

void append_metrics_jsonl(std::ostream& os, const MetricsRecord& rec) {
  using nlohmann::json;
  json train_line = {
      {"epoch", rec.epoch},         {"split", "train"},
      {"band_r_low", 0.0},          {"band_r_high", "inf"},
      {"accuracy", nullptr},        {"loss", rec.train_loss},
      {"lr", rec.lr},
  };
  os << train_line.dump() << "\n";
  if (rec.test_accuracy) {
    json test_line = {
        {"epoch", rec.epoch},         {"split", "test"},
        {"band_r_low", 0.0},          {"band_r_high", "inf"},
        {"accuracy", *rec.test_accuracy}, {"loss", nullptr},
        {"lr", rec.lr},
    };
    os << test_line.dump() << "\n";
  }
  for (const auto& band : rec.band_accuracy) {
    json line = {
        {"epoch", rec.epoch},          {"split", "test_band"},
        {"band_r_low", band.r_low},    {"band_r_high", band_high(band.r_high)},
        {"accuracy", band.accuracy},   {"loss", nullptr},
        {"lr", rec.lr},
    };
    os << line.dump() << "\n";
  }
  os.flush();
}

}  // namespace gmlab
