#include "util/binio.hpp"

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace sftok {

void write_i32(std::ostream& out, int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_i64(std::ostream& out, int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f32_block(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void write_f64_block(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void write_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

int32_t read_i32(std::istream& in) {
  int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  check(in.good(), ErrorCode::io, "truncated stream while reading int32");
  return v;
}

int64_t read_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  check(in.good(), ErrorCode::io, "truncated stream while reading int64");
  return v;
}

std::vector<float> read_f32_block(std::istream& in, size_t n) {
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  check(!in.fail(), ErrorCode::io, "truncated float32 block");
  return v;
}

std::vector<double> read_f64_block(std::istream& in, size_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  check(!in.fail(), ErrorCode::io, "truncated float64 block");
  return v;
}

std::string read_bytes(std::istream& in, size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  check(!in.fail(), ErrorCode::io, "truncated byte block");
  return s;
}

void save_token_file(const std::string& path, const TokenFile& tf) {
  check(static_cast<size_t>(tf.num_items) * tf.seq_len == tf.ids.size(),
        ErrorCode::shape_mismatch, "token file: id count vs header");
  for (int32_t id : tf.ids)
    check(id >= 0 && id < tf.vocab, ErrorCode::out_of_range,
          "token file: id outside vocabulary");
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::io, "cannot write " + path);
  write_i32(out, tf.num_items);
  write_i32(out, tf.seq_len);
  write_i32(out, tf.vocab);
  out.write(reinterpret_cast<const char*>(tf.ids.data()),
            static_cast<std::streamsize>(tf.ids.size() * sizeof(int32_t)));
  check(out.good(), ErrorCode::io, "write failed for " + path);
}

TokenFile load_token_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::io, "cannot open " + path);
  TokenFile tf;
  tf.num_items = read_i32(in);
  tf.seq_len = read_i32(in);
  tf.vocab = read_i32(in);
  check(tf.num_items >= 0 && tf.seq_len > 0 && tf.vocab > 0, ErrorCode::io,
        "token file: invalid header in " + path);
  size_t n = static_cast<size_t>(tf.num_items) * tf.seq_len;
  tf.ids.resize(n);
  in.read(reinterpret_cast<char*>(tf.ids.data()),
          static_cast<std::streamsize>(n * sizeof(int32_t)));
  check(!in.fail(), ErrorCode::io, "truncated token file " + path);
  for (int32_t id : tf.ids)
    check(id >= 0 && id < tf.vocab, ErrorCode::out_of_range,
          "token file: id outside vocabulary in " + path);
  return tf;
}

void save_corpus_file(const std::string& path, const CorpusFile& cf) {
  check(static_cast<size_t>(cf.tokens.num_items) == cf.labels.size(),
        ErrorCode::shape_mismatch, "corpus file: label count vs items");
  save_token_file(path, cf.tokens);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out.write(reinterpret_cast<const char*>(cf.labels.data()),
            static_cast<std::streamsize>(cf.labels.size() * sizeof(int32_t)));
  check(out.good(), ErrorCode::io, "write failed for " + path);
}

CorpusFile load_corpus_file(const std::string& path) {
  CorpusFile cf;
  cf.tokens = load_token_file(path);
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(
      3 * sizeof(int32_t) + cf.tokens.ids.size() * sizeof(int32_t)));
  cf.labels.resize(cf.tokens.num_items);
  in.read(reinterpret_cast<char*>(cf.labels.data()),
          static_cast<std::streamsize>(cf.labels.size() * sizeof(int32_t)));
  check(!in.fail(), ErrorCode::io, "truncated corpus file " + path);
  return cf;
}

}  // namespace sftok
