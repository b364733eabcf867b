#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "util/hash.hpp"
#include "util/json_io.hpp"

namespace sftok {

namespace {

double clamp1(double x) { return std::max(-1.0, std::min(1.0, x)); }

struct Color {
  double r, g, b;
};

Color random_color(Rng& rng) {
  return {rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7),
          rng.uniform(-0.7, 0.7)};
}

Color lerp(const Color& a, const Color& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

void paint(Image& im, int y, int x, const Color& c) {
  im.at(y, x, 0) = c.r;
  im.at(y, x, 1) = c.g;
  im.at(y, x, 2) = c.b;
}

}  // namespace

SyntheticDataset::SyntheticDataset(int64_t count, int num_classes,
                                   int resolution, uint64_t seed,
                                   std::string split_tag)
    : count_(count),
      num_classes_(num_classes),
      resolution_(resolution),
      seed_(seed),
      tag_(std::move(split_tag)) {
  check(count_ >= 0, ErrorCode::invalid_argument, "negative dataset size");
  check(num_classes_ >= 1 && num_classes_ <= 10, ErrorCode::config,
        "synthetic corpus supports 1..10 classes");
  check(resolution_ >= 8, ErrorCode::config,
        "synthetic corpus needs resolution >= 8");
}

LabeledImage SyntheticDataset::example(int64_t index) const {
  check(index >= 0 && index < count_, ErrorCode::out_of_range,
        "dataset index out of range");
  Rng rng(seed_ ^ fnv1a64(tag_ + "#" + std::to_string(index)));
  const int n = resolution_;
  const int32_t label = int32_t(index % num_classes_);

  Image im = make_image(n, n);
  const Color bg = random_color(rng);
  const Color fg = random_color(rng);
  const double cx = n * rng.uniform(0.35, 0.65);
  const double cy = n * rng.uniform(0.35, 0.65);
  const double period = rng.uniform(3.0, 8.0);
  const double phase = rng.uniform(0.0, period);
  const double radius = n * rng.uniform(0.2, 0.38);
  const double thick = n * rng.uniform(0.05, 0.12);
  const int orient = int(rng.uniform_int(4));

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bool hit = false;
      double t = 0.0;
      switch (label) {
        case 0:  // horizontal stripes
          hit = std::fmod(y + phase, period) < period * 0.5;
          break;
        case 1:  // vertical stripes
          hit = std::fmod(x + phase, period) < period * 0.5;
          break;
        case 2:  // diagonal stripes
          hit = std::fmod(x + y + phase, period) < period * 0.5;
          break;
        case 3:  // checkerboard
          hit = (int(std::floor((x + phase) / period)) +
                 int(std::floor((y + phase) / period))) %
                    2 ==
                0;
          break;
        case 4:  // filled disc
          hit = std::hypot(x - cx, y - cy) < radius;
          break;
        case 5: {  // ring
          const double d = std::hypot(x - cx, y - cy);
          hit = std::abs(d - radius) < thick;
          break;
        }
        case 6: {  // square frame
          const double dx = std::abs(x - cx), dy = std::abs(y - cy);
          const double d = std::max(dx, dy);
          hit = std::abs(d - radius) < thick;
          break;
        }
        case 7: {  // plus sign
          hit = (std::abs(x - cx) < thick || std::abs(y - cy) < thick) &&
                std::max(std::abs(x - cx), std::abs(y - cy)) < radius;
          break;
        }
        case 8: {  // corner wedge
          const double u = double(x) / (n - 1), v = double(y) / (n - 1);
          switch (orient) {
            case 0: hit = u + v < 1.0; break;
            case 1: hit = u > v; break;
            case 2: hit = u + v > 1.0; break;
            default: hit = u < v; break;
          }
          break;
        }
        default: {  // radial gradient
          const double d = std::hypot(x - cx, y - cy) / (0.75 * n);
          t = std::min(1.0, d);
          break;
        }
      }
      Color c;
      if (label == 9)
        c = lerp(fg, bg, t);
      else
        c = hit ? fg : bg;
      paint(im, y, x, c);
    }

  for (auto& v : im.v) v = clamp1(v + 0.03 * rng.normal());
  return {std::move(im), label};
}

DatasetManifest load_manifest(const std::string& path) {
  Json j = load_json_file(path);
  check(j.is_object(), ErrorCode::config, "manifest must be a JSON object");
  DatasetManifest m;
  const auto dir = std::filesystem::path(path).parent_path();
  m.root = j.value("root", dir.string());
  if (!std::filesystem::path(m.root).is_absolute())
    m.root = (dir / m.root).lexically_normal().string();

  auto read_split = [&](const char* key, std::vector<ManifestItem>& out) {
    if (!j.contains(key)) return;
    check(j[key].is_array(), ErrorCode::config,
          std::string("manifest split '") + key + "' must be an array");
    for (const auto& e : j[key]) {
      check(e.is_object() && e.contains("path") && e.contains("label"),
            ErrorCode::config, "manifest entries need path and label");
      check(e["path"].is_string(), ErrorCode::config,
            "manifest paths must be strings");
      ManifestItem it;
      std::filesystem::path p = std::string(e["path"]);
      it.path = p.is_absolute()
                    ? p.string()
                    : (std::filesystem::path(m.root) / p).string();
      check(e["label"].is_number_integer(), ErrorCode::config,
            "manifest labels must be integers");
      it.label = int32_t(e["label"]);
      check(it.label >= 0, ErrorCode::config, "negative manifest label");
      bool ok = false;
      try {
        load_ppm(it.path);
        ok = true;
      } catch (const Error&) {
      }
      if (!ok) {
        std::fprintf(stderr, "warning: skipping unreadable image %s\n",
                     it.path.c_str());
        ++m.skipped;
        continue;
      }
      out.push_back(std::move(it));
    }
  };
  read_split("train", m.train);
  read_split("eval", m.eval);
  check(!m.train.empty(), ErrorCode::config,
        "manifest has no readable training images");

  int32_t max_label = 0;
  for (const auto& it : m.train) max_label = std::max(max_label, it.label);
  for (const auto& it : m.eval) max_label = std::max(max_label, it.label);
  m.num_classes = j.value("num_classes", max_label + 1);
  check(m.num_classes > max_label, ErrorCode::config,
        "manifest label exceeds num_classes");
  return m;
}

FolderDataset::FolderDataset(std::vector<ManifestItem> items, int num_classes,
                             int resize_shorter)
    : items_(std::move(items)),
      num_classes_(num_classes),
      resize_shorter_(resize_shorter) {}

LabeledImage FolderDataset::example(int64_t index) const {
  check(index >= 0 && index < size(), ErrorCode::out_of_range,
        "dataset index out of range");
  const auto& it = items_[size_t(index)];
  Image im = resize_shorter_edge(load_ppm(it.path), resize_shorter_);
  return {std::move(im), it.label};
}

DatasetPair open_datasets(const RunConfig& rc) {
  DatasetPair p;
  if (rc.dataset.dataset_type == "synthetic") {
    p.train = std::make_unique<SyntheticDataset>(
        rc.experiment.max_train_examples, rc.dataset.num_classes,
        rc.dataset.resize_shorter_edge, rc.experiment.seed, "train");
    p.eval = std::make_unique<SyntheticDataset>(
        rc.experiment.eval_examples, rc.dataset.num_classes,
        rc.dataset.resize_shorter_edge, rc.experiment.seed, "eval");
    return p;
  }
  DatasetManifest m = load_manifest(rc.dataset.manifest_path);
  std::vector<ManifestItem> train = m.train;
  if (int64_t(train.size()) > rc.experiment.max_train_examples)
    train.resize(size_t(rc.experiment.max_train_examples));
  std::vector<ManifestItem> eval = m.eval.empty() ? m.train : m.eval;
  if (int64_t(eval.size()) > rc.experiment.eval_examples)
    eval.resize(size_t(rc.experiment.eval_examples));
  p.train = std::make_unique<FolderDataset>(std::move(train), m.num_classes,
                                            rc.dataset.resize_shorter_edge);
  p.eval = std::make_unique<FolderDataset>(std::move(eval), m.num_classes,
                                           rc.dataset.resize_shorter_edge);
  return p;
}

BatchStream::BatchStream(const Dataset& ds, int batch_size, int crop,
                         bool shuffle, bool augment, uint64_t seed)
    : ds_(ds),
      batch_size_(batch_size),
      crop_(crop),
      shuffle_(shuffle),
      augment_(augment),
      rng_(seed) {
  check(batch_size_ >= 1, ErrorCode::invalid_argument, "batch size < 1");
  check(ds_.size() > 0, ErrorCode::invalid_argument, "empty dataset");
  start_epoch();
}

void BatchStream::start_epoch() {
  const int n = int(ds_.size());
  order_.resize(size_t(n));
  if (shuffle_) {
    auto p = rng_.permutation(n);
    for (int i = 0; i < n; ++i) order_[size_t(i)] = p[size_t(i)];
  } else {
    for (int i = 0; i < n; ++i) order_[size_t(i)] = i;
  }
  cursor_ = 0;
}

bool BatchStream::next(Batch& out) {
  if (cursor_ >= int64_t(order_.size())) {
    ++epoch_;
    start_epoch();
    return false;
  }
  const int64_t take =
      std::min<int64_t>(batch_size_, int64_t(order_.size()) - cursor_);
  std::vector<Image> images;
  images.reserve(size_t(take));
  out.labels.clear();
  for (int64_t k = 0; k < take; ++k) {
    LabeledImage ex = ds_.example(order_[size_t(cursor_ + k)]);
    const Image& im = ex.image;
    check(im.h >= crop_ && im.w >= crop_, ErrorCode::shape_mismatch,
          "image smaller than the crop size");
    Image c;
    if (augment_) {
      const int top = int(rng_.uniform_int(im.h - crop_ + 1));
      const int left = int(rng_.uniform_int(im.w - crop_ + 1));
      c = crop(im, top, left, crop_);
      if (rng_.bernoulli(0.5)) c = hflip(c);
    } else {
      c = center_crop(im, crop_);
    }
    images.push_back(std::move(c));
    out.labels.push_back(ex.label);
  }
  cursor_ += take;
  out.images = image_batch_tensor(images);
  return true;
}

Batch BatchStream::next_cycle() {
  Batch b;
  while (!next(b)) {
  }
  return b;
}

Json BatchStream::state() const {
  Json s;
  s["rng"] = rng_.serialize();
  s["epoch"] = epoch_;
  s["cursor"] = cursor_;
  s["order"] = order_;
  return s;
}

void BatchStream::restore(const Json& s) {
  rng_.deserialize(s.at("rng").get<std::string>());
  epoch_ = s.at("epoch").get<int64_t>();
  cursor_ = s.at("cursor").get<int64_t>();
  order_ = s.at("order").get<std::vector<int64_t>>();
  check(int64_t(order_.size()) == ds_.size(), ErrorCode::state,
        "stream state is for a different dataset");
}

}  // namespace sftok
