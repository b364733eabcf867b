#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/types.hpp"
#include "io/config.hpp"
#include "util/json_io.hpp"
#include "util/rng.hpp"

namespace sftok {

// One example before batching: image resized so the shorter edge matches the
// configured size; cropping happens in the stream.
struct LabeledImage {
  Image image;
  int32_t label = 0;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t size() const = 0;
  virtual int num_classes() const = 0;
  virtual LabeledImage example(int64_t index) const = 0;
};

// Procedural corpus: ten pattern families (stripes, checkers, discs, rings,
// frames, crosses, wedges, gradients) with per-example global parameters
// shared across the whole canvas. Every example is a pure function of
// (seed, split tag, index).
class SyntheticDataset : public Dataset {
 public:
  SyntheticDataset(int64_t count, int num_classes, int resolution,
                   uint64_t seed, std::string split_tag);
  int64_t size() const override { return count_; }
  int num_classes() const override { return num_classes_; }
  LabeledImage example(int64_t index) const override;

 private:
  int64_t count_;
  int num_classes_;
  int resolution_;
  uint64_t seed_;
  std::string tag_;
};

// On-disk corpus described by a manifest: {"root": dir, "num_classes": n,
// "train": [{"path": p, "label": l}, ...], "eval": [...]}. Files are probed at
// load; unreadable entries are dropped with a warning and counted.
struct ManifestItem {
  std::string path;  // absolute after load
  int32_t label = 0;
};

struct DatasetManifest {
  std::string root;
  int num_classes = 0;
  std::vector<ManifestItem> train;
  std::vector<ManifestItem> eval;
  int64_t skipped = 0;
};

DatasetManifest load_manifest(const std::string& path);

class FolderDataset : public Dataset {
 public:
  FolderDataset(std::vector<ManifestItem> items, int num_classes,
                int resize_shorter);
  int64_t size() const override { return int64_t(items_.size()); }
  int num_classes() const override { return num_classes_; }
  LabeledImage example(int64_t index) const override;

 private:
  std::vector<ManifestItem> items_;
  int num_classes_;
  int resize_shorter_;
};

// Builds the train/eval pair for the configured dataset type.
struct DatasetPair {
  std::unique_ptr<Dataset> train;
  std::unique_ptr<Dataset> eval;
};
DatasetPair open_datasets(const RunConfig& rc);

struct Batch {
  nn::TensorPtr images;  // [B, crop, crop, 3]
  std::vector<int32_t> labels;
};

// Deterministic batcher. Shuffling draws a fresh permutation per epoch from
// the stream's own rng; augmentation (random crop + horizontal flip) uses the
// same stream. Without shuffle the order is the dataset order and the final
// batch may be short.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch_size, int crop, bool shuffle,
              bool augment, uint64_t seed);

  // False once at epoch end; the next call starts the next epoch.
  bool next(Batch& out);
  // Convenience for training loops: never-ending stream.
  Batch next_cycle();

  // Snapshot/restore of the full iteration state (rng, epoch, cursor,
  // current order) for exact mid-epoch resume.
  Json state() const;
  void restore(const Json& s);

  int64_t epoch() const { return epoch_; }
  Rng& rng() { return rng_; }

 private:
  void start_epoch();

  const Dataset& ds_;
  int batch_size_, crop_;
  bool shuffle_, augment_;
  Rng rng_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
  int64_t epoch_ = 0;
};

}  // namespace sftok
