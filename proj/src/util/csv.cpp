#include "util/csv.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "util/error.hpp"

namespace sftok {

namespace {

std::string read_hash_comment(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::io, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  const std::string prefix = "# config_hash=";
  check(line.rfind(prefix, 0) == 0, ErrorCode::io,
        path + ": missing config_hash comment");
  return line.substr(prefix.size());
}

}  // namespace

LossCsv::LossCsv(const std::string& path, const std::string& config_hash)
    : path_(path) {
  if (std::filesystem::exists(path)) {
    std::string stored = read_hash_comment(path);
    check(stored == config_hash, ErrorCode::state,
          path + ": existing curve belongs to config " + stored +
              ", refusing to append records for " + config_hash);
    return;
  }
  std::ofstream out(path);
  check(out.good(), ErrorCode::io, "cannot write " + path);
  out << "# config_hash=" << config_hash << "\n";
  out << "step,stage,term,value\n";
}

void LossCsv::append(int64_t step, int stage, const std::string& term,
                     double value) {
  check(term.find(',') == std::string::npos, ErrorCode::invalid_argument,
        "loss term name may not contain a comma");
  std::ofstream out(path_, std::ios::app);
  check(out.good(), ErrorCode::io, "cannot append to " + path_);
  out << step << "," << stage << "," << term << ","
      << std::setprecision(17) << value << "\n";
}

LossTable load_loss_csv(const std::string& path) {
  LossTable table;
  table.config_hash = read_hash_comment(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // hash comment
  std::getline(in, line);  // header
  check(line == "step,stage,term,value", ErrorCode::io,
        path + ": unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    LossRow r;
    std::string field;
    std::getline(row, field, ',');
    r.step = std::stoll(field);
    std::getline(row, field, ',');
    r.stage = std::stoi(field);
    std::getline(row, r.term, ',');
    std::getline(row, field, ',');
    r.value = std::stod(field);
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace sftok
