#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlt/mixer.hpp"
#include "stlt/optimizer.hpp"

namespace stlt {

// Versioned little-endian flat binary: header (magic, version, blob count),
// then named float64 blobs (name length, name bytes, rank, dims, data).
struct BlobStore {
  struct Blob {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
  };
  std::vector<Blob> blobs;

  void put(const std::string& name, std::vector<std::uint64_t> dims,
           std::vector<double> data);
  void put_scalar(const std::string& name, double value);
  const Blob* find(const std::string& name) const;
  const Blob& require(const std::string& name) const;  // throws when missing
  double scalar(const std::string& name) const;
};

void write_blob_file(const std::string& path, const BlobStore& store);
BlobStore read_blob_file(const std::string& path);  // throws std::runtime_error on corruption

struct Checkpoint {
  ModelParams params;
  AdamW opt;
  long step = 0;
  std::uint64_t seed = 0;
  double lambda_t = 1.0;
};

void save_checkpoint(const std::string& path, ModelParams& params, const AdamW* opt,
                     long step, std::uint64_t seed, double lambda_t);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stlt
