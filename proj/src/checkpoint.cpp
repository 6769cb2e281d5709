#include "stlt/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stlt {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'L', 'T', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void BlobStore::put(const std::string& name, std::vector<std::uint64_t> dims,
                    std::vector<double> data) {
  std::uint64_t count = 1;
  for (std::uint64_t d : dims) count *= d;
  if (count != data.size())
    throw std::invalid_argument("BlobStore::put: dims/data mismatch for " + name);
  blobs.push_back({name, std::move(dims), std::move(data)});
}

void BlobStore::put_scalar(const std::string& name, double value) {
  blobs.push_back({name, {}, {value}});
}

const BlobStore::Blob* BlobStore::find(const std::string& name) const {
  for (const Blob& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

const BlobStore::Blob& BlobStore::require(const std::string& name) const {
  const Blob* b = find(name);
  if (!b) throw std::runtime_error("checkpoint: missing blob " + name);
  return *b;
}

double BlobStore::scalar(const std::string& name) const {
  const Blob& b = require(name);
  if (b.data.size() != 1)
    throw std::runtime_error("checkpoint: blob " + name + " is not a scalar");
  return b.data[0];
}

void write_blob_file(const std::string& path, const BlobStore& store) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(store.blobs.size()));
    for (const BlobStore::Blob& b : store.blobs) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
      out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.dims.size()));
      for (std::uint64_t d : b.dims) write_pod<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(b.data.data()),
                static_cast<std::streamsize>(b.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot move " + tmp + " to " + path);
}

BlobStore read_blob_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const auto n_blobs = read_pod<std::uint32_t>(in);
  BlobStore store;
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    BlobStore::Blob b;
    const auto name_len = read_pod<std::uint32_t>(in);
    if (name_len > 4096) throw std::runtime_error("checkpoint: oversized name");
    b.name.resize(name_len);
    in.read(b.name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint: oversized rank");
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      b.dims.push_back(read_pod<std::uint64_t>(in));
      count *= b.dims.back();
    }
    if (count > (1ULL << 32)) throw std::runtime_error("checkpoint: oversized blob");
    b.data.resize(count);
    in.read(reinterpret_cast<char*>(b.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated blob " + b.name);
    store.blobs.push_back(std::move(b));
  }
  return store;
}

void save_checkpoint(const std::string& path, ModelParams& params, const AdamW* opt,
                     long step, std::uint64_t seed, double lambda_t) {
  BlobStore store;
  store.put_scalar("meta.vocab", static_cast<double>(params.vocab));
  store.put_scalar("meta.d", static_cast<double>(params.d));
  store.put_scalar("meta.d_ff", static_cast<double>(params.d_ff));
  store.put_scalar("meta.n_ctx", static_cast<double>(params.n_ctx));
  store.put_scalar("meta.s_max", static_cast<double>(params.s_max));
  store.put_scalar("meta.n_enc", static_cast<double>(params.encoder_blocks.size()));
  store.put_scalar("meta.n_dec", static_cast<double>(params.decoder_blocks.size()));
  const double delta =
      params.decoder_blocks.empty() ? 1.0 : params.decoder_blocks[0].bank.delta;
  store.put_scalar("meta.delta", delta);
  store.put_scalar("train.step", static_cast<double>(step));
  store.put_scalar("train.seed", static_cast<double>(seed));
  store.put_scalar("train.lambda_t", lambda_t);

  std::vector<ParamSlot> slots = param_slots(params);
  for (const ParamSlot& s : slots) {
    std::vector<std::uint64_t> dims(s.shape.begin(), s.shape.end());
    store.put(s.name, std::move(dims),
              std::vector<double>(s.data, s.data + s.size()));
  }
  if (opt) {
    store.put_scalar("adam.t", static_cast<double>(opt->t));
    if (opt->m.size() == slots.size())
      for (std::size_t i = 0; i < slots.size(); ++i) {
        std::vector<std::uint64_t> dims(slots[i].shape.begin(), slots[i].shape.end());
        store.put("adam.m." + slots[i].name, dims, opt->m[i]);
        store.put("adam.v." + slots[i].name, std::move(dims), opt->v[i]);
      }
  }
  write_blob_file(path, store);
}

Checkpoint load_checkpoint(const std::string& path) {
  const BlobStore store = read_blob_file(path);
  Checkpoint ck;
  const auto vocab = static_cast<std::size_t>(store.scalar("meta.vocab"));
  const auto d = static_cast<std::size_t>(store.scalar("meta.d"));
  const auto d_ff = static_cast<std::size_t>(store.scalar("meta.d_ff"));
  const auto n_ctx = static_cast<std::size_t>(store.scalar("meta.n_ctx"));
  const auto s_max = static_cast<std::size_t>(store.scalar("meta.s_max"));
  const auto n_enc = static_cast<std::size_t>(store.scalar("meta.n_enc"));
  const auto n_dec = static_cast<std::size_t>(store.scalar("meta.n_dec"));
  const double delta = store.scalar("meta.delta");
  ck.step = static_cast<long>(store.scalar("train.step"));
  ck.seed = static_cast<std::uint64_t>(store.scalar("train.seed"));
  ck.lambda_t = store.scalar("train.lambda_t");

  BankInit bi;
  bi.delta = delta;
  ck.params = init_lm_model(vocab, d, d_ff, n_ctx, n_dec, s_max, bi, 0);
  for (std::size_t l = 0; l < n_enc; ++l)
    ck.params.encoder_blocks.push_back(init_block(d, d_ff, s_max, bi, l));

  std::vector<ParamSlot> slots = param_slots(ck.params);
  for (ParamSlot& s : slots) {
    const BlobStore::Blob& b = store.require(s.name);
    if (b.data.size() != s.size())
      throw std::runtime_error("checkpoint: size mismatch for " + s.name);
    std::copy(b.data.begin(), b.data.end(), s.data);
  }
  if (store.find("adam.t")) {
    ck.opt.t = static_cast<long>(store.scalar("adam.t"));
    ck.opt.m.resize(slots.size());
    ck.opt.v.resize(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
      ck.opt.m[i] = store.require("adam.m." + slots[i].name).data;
      ck.opt.v[i] = store.require("adam.v." + slots[i].name).data;
    }
  }
  return ck;
}

}  // namespace stlt
