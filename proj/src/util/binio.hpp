#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "util/error.hpp"

namespace sftok {

// All binary artifacts are little-endian. Primitives below write raw host
// bytes; a compile-time check in binio.cpp rejects big-endian builds.

void write_i32(std::ostream& out, int32_t v);
void write_i64(std::ostream& out, int64_t v);
void write_f32_block(std::ostream& out, const std::vector<float>& v);
void write_f64_block(std::ostream& out, const std::vector<double>& v);
void write_bytes(std::ostream& out, const std::string& s);

int32_t read_i32(std::istream& in);
int64_t read_i64(std::istream& in);
std::vector<float> read_f32_block(std::istream& in, size_t n);
std::vector<double> read_f64_block(std::istream& in, size_t n);
std::string read_bytes(std::istream& in, size_t n);

// Token grids on disk: an int32 header (num_items, seq_len, vocab) followed
// by row-major int32 ids. Shared by the encode/decode commands and tests.
struct TokenFile {
  int32_t num_items = 0;
  int32_t seq_len = 0;
  int32_t vocab = 0;
  std::vector<int32_t> ids;
};

void save_token_file(const std::string& path, const TokenFile& tf);
TokenFile load_token_file(const std::string& path);

// Pre-tokenized generator corpus: the token layout above plus one int32
// class label per item.
struct CorpusFile {
  TokenFile tokens;
  std::vector<int32_t> labels;
};

void save_corpus_file(const std::string& path, const CorpusFile& cf);
CorpusFile load_corpus_file(const std::string& path);

}  // namespace sftok
