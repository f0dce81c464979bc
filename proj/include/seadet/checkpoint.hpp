#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

// Per-parameter adaptive-moment buffers plus the shared step counter. Plain
// SGD leaves the buffers at zero; they only accumulate once the adaptive
// phase engages, and they round-trip through checkpoints either way.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<Tensor> m;  // first moments, aligned with the parameter list
  std::vector<Tensor> v;  // second moments

  void reset(const std::vector<Parameter*>& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const Parameter* p : params) {
      m.push_back(Tensor(p->value.shape()));
      v.push_back(Tensor(p->value.shape()));
    }
  }
};

struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::int64_t epoch = -1;  // last completed epoch, -1 when untrained
  std::vector<std::string> names;
  std::vector<Tensor> values;
  OptimizerState optimizer;
};

// 64-bit FNV-1a over a canonical config string; cheap tamper/mismatch guard,
// not a cryptographic hash.
inline std::uint64_t config_digest(const std::string& canonical) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'A', 'D', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  data_check(is.good(), "checkpoint: truncated file");
  return v;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (int a = 0; a < t.rank(); ++a) write_pod<std::int32_t>(os, t.extent(a));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(Real)));
}

inline Tensor read_tensor(std::istream& is) {
  const auto rank = read_pod<std::uint32_t>(is);
  data_check(rank <= 8, "checkpoint: implausible tensor rank");
  Shape shape;
  for (std::uint32_t a = 0; a < rank; ++a) {
    const auto e = read_pod<std::int32_t>(is);
    data_check(e >= 0, "checkpoint: negative extent");
    shape.push_back(e);
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data().data()),
          static_cast<std::streamsize>(t.numel() * sizeof(Real)));
  data_check(is.good(), "checkpoint: truncated tensor data");
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  check(ck.names.size() == ck.values.size(), "checkpoint: name/value count mismatch");
  check(ck.optimizer.m.size() == ck.values.size() && ck.optimizer.v.size() == ck.values.size(),
        "checkpoint: optimizer state must align with parameters");
  std::ofstream os(path, std::ios::binary);
  data_check(os.good(), "checkpoint: cannot open for writing: " + path.string());
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod(os, detail::kCheckpointVersion);
  detail::write_pod(os, ck.config_digest);
  detail::write_pod(os, ck.epoch);
  detail::write_pod(os, ck.optimizer.step);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.names.size()));
  for (std::size_t i = 0; i < ck.names.size(); ++i) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.names[i].size()));
    os.write(ck.names[i].data(), static_cast<std::streamsize>(ck.names[i].size()));
    detail::write_tensor(os, ck.values[i]);
    detail::write_tensor(os, ck.optimizer.m[i]);
    detail::write_tensor(os, ck.optimizer.v[i]);
  }
  data_check(os.good(), "checkpoint: write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  data_check(is.good(), "checkpoint: cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  data_check(is.good() && std::memcmp(magic, detail::kCheckpointMagic, 8) == 0,
             "checkpoint: bad magic in " + path.string());
  const auto version = detail::read_pod<std::uint32_t>(is);
  data_check(version == detail::kCheckpointVersion, "checkpoint: unsupported version");
  Checkpoint ck;
  ck.config_digest = detail::read_pod<std::uint64_t>(is);
  ck.epoch = detail::read_pod<std::int64_t>(is);
  ck.optimizer.step = detail::read_pod<std::int64_t>(is);
  const auto count = detail::read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::read_pod<std::uint32_t>(is);
    data_check(len <= 4096, "checkpoint: implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    data_check(is.good(), "checkpoint: truncated name");
    ck.names.push_back(std::move(name));
    ck.values.push_back(detail::read_tensor(is));
    ck.optimizer.m.push_back(detail::read_tensor(is));
    ck.optimizer.v.push_back(detail::read_tensor(is));
  }
  return ck;
}

// Snapshot the live parameters (and optimizer buffers) into a Checkpoint.
inline Checkpoint snapshot(const std::vector<Parameter*>& params, const OptimizerState& opt,
                           std::int64_t epoch, std::uint64_t digest) {
  check(opt.m.size() == params.size() && opt.v.size() == params.size(),
        "checkpoint: optimizer state must align with parameters");
  Checkpoint ck;
  ck.config_digest = digest;
  ck.epoch = epoch;
  ck.optimizer = opt;
  for (const Parameter* p : params) {
    ck.names.push_back(p->name);
    ck.values.push_back(p->value);
  }
  return ck;
}

// Restore parameter values (and optimizer buffers) by name. Every live
// parameter must be present with a matching shape.
inline void restore(const Checkpoint& ck, const std::vector<Parameter*>& params,
                    OptimizerState* opt) {
  if (opt)
    check(opt->m.size() == params.size() && opt->v.size() == params.size(),
          "checkpoint: optimizer state must align with parameters");
  for (std::size_t j = 0; j < params.size(); ++j) {
    Parameter* p = params[j];
    bool found = false;
    for (std::size_t i = 0; i < ck.names.size(); ++i) {
      if (ck.names[i] != p->name) continue;
      data_check(ck.values[i].shape() == p->value.shape(),
                 "checkpoint: shape mismatch for " + p->name);
      p->value = ck.values[i];
      if (opt) {
        opt->m[j] = ck.optimizer.m[i];
        opt->v[j] = ck.optimizer.v[i];
      }
      found = true;
      break;
    }
    data_check(found, "checkpoint: missing parameter " + p->name);
  }
  if (opt) opt->step = ck.optimizer.step;
}

}  // namespace seadet
