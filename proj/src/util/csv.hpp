#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sftok {

// Loss curves accumulate in a long-format CSV: one row per (step, stage, term)
// with the resolved config hash recorded in a leading comment so downstream
// tooling can refuse to mix incompatible runs.
struct LossRow {
  int64_t step = 0;
  int stage = 0;
  std::string term;
  double value = 0.0;
};

class LossCsv {
 public:
  // Creates the file with header + hash comment, or appends to an existing
  // file after verifying the stored hash matches.
  LossCsv(const std::string& path, const std::string& config_hash);

  void append(int64_t step, int stage, const std::string& term, double value);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct LossTable {
  std::string config_hash;
  std::vector<LossRow> rows;
};

LossTable load_loss_csv(const std::string& path);

}  // namespace sftok
