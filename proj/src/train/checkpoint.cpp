// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "muse/train.hpp"

namespace muse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "MUSECKPT v1\n";

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void floats(std::vector<float>& out, std::size_t n) {
    need(n * sizeof(float));
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put<std::uint64_t>(out, ckpt.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.fingerprint.size()));
  out += ckpt.fingerprint;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    if (p.values.size() != shape_numel(p.shape)) {
      throw IntegrityError("checkpoint entry '" + p.name + "' has inconsistent size");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t dim : p.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    out.append(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (bytes.compare(0, magic_len, kMagic) != 0) {
    throw IntegrityError("not a checkpoint file (bad header)");
  }
  Reader r(bytes);
  r.text(magic_len);
  Checkpoint ckpt;
  ckpt.step = r.get<std::uint64_t>();
  ckpt.fingerprint = r.text(r.get<std::uint32_t>());
  const std::uint32_t count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray p;
    p.name = r.text(r.get<std::uint32_t>());
    const std::uint32_t rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) p.shape.push_back(r.get<std::uint32_t>());
    r.floats(p.values, shape_numel(p.shape));
    for (const auto& q : ckpt.params) {
      if (q.name == p.name) throw IntegrityError("duplicate checkpoint entry '" + p.name + "'");
    }
    ckpt.params.push_back(std::move(p));
  }
  if (!r.done()) throw IntegrityError("trailing bytes after checkpoint data");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FileError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FileError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts) {
  if (ckpts.empty()) throw UsageError("average_checkpoints: no checkpoints given");
  const Checkpoint& first = ckpts.front();
  for (const auto& c : ckpts) {
    if (c.fingerprint != first.fingerprint) {
      throw IntegrityError("average_checkpoints: configuration fingerprints differ");
    }
    if (c.params.size() != first.params.size()) {
      throw IntegrityError("average_checkpoints: parameter counts differ");
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (c.params[i].name != first.params[i].name || c.params[i].shape != first.params[i].shape) {
        throw IntegrityError("average_checkpoints: entry '" + c.params[i].name +
                             "' does not match '" + first.params[i].name + "'");
      }
    }
  }
  Checkpoint out;
  out.fingerprint = first.fingerprint;
  for (const auto& c : ckpts) out.step = std::max(out.step, c.step);
  // Sorting each coordinate's values makes the sum independent of list order.
  std::vector<double> column(ckpts.size());
  for (std::size_t i = 0; i < first.params.size(); ++i) {
    NamedArray avg{first.params[i].name, first.params[i].shape,
                   std::vector<float>(first.params[i].values.size())};
    for (std::size_t j = 0; j < avg.values.size(); ++j) {
      for (std::size_t c = 0; c < ckpts.size(); ++c) column[c] = ckpts[c].params[i].values[j];
      std::sort(column.begin(), column.end());
      double total = 0.0;
      for (double x : column) total += x;
      avg.values[j] = static_cast<float>(total / static_cast<double>(ckpts.size()));
    }
    out.params.push_back(std::move(avg));
  }
  return out;
}

template <typename T>
Checkpoint make_checkpoint(const Seq2Seq<T>& model, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.fingerprint = model.config().fingerprint();
  for (const auto& [name, t] : model.named_parameters()) {
    NamedArray a{name, t.shape(), {}};
    a.values.reserve(t.size());
    for (T x : t.data()) a.values.push_back(static_cast<float>(x));
    ckpt.params.push_back(std::move(a));
  }
  return ckpt;
}

template <typename T>
void apply_checkpoint(Seq2Seq<T>& model, const Checkpoint& ckpt) {
  if (ckpt.fingerprint != model.config().fingerprint()) {
    throw IntegrityError("checkpoint was written for a different model configuration");
  }
  NamedTensors<T> values;
  for (const auto& a : ckpt.params) {
    values.emplace_back(a.name, Tensor<T>(a.shape, std::vector<T>(a.values.begin(), a.values.end())));
  }
  if (values.size() != model.named_parameters().size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(values.size()) +
                         " parameters, model has " +
                         std::to_string(model.named_parameters().size()));
  }
  model.load(values);
}

template Checkpoint make_checkpoint(const Seq2Seq<float>&, std::uint64_t);
template Checkpoint make_checkpoint(const Seq2Seq<double>&, std::uint64_t);
template void apply_checkpoint(Seq2Seq<float>&, const Checkpoint&);
template void apply_checkpoint(Seq2Seq<double>&, const Checkpoint&);

}  // namespace muse
