#include "recon_ood/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r.tensor;
  }
  return nullptr;
}

void Checkpoint::set_meta(const std::string& key, double value) {
  const std::string name = std::string(kMetaPrefix) + key;
  for (auto& r : records) {
    if (r.name == name) {
      r.tensor = Tensor::scalar(static_cast<float>(value));
      return;
    }
  }
  records.push_back({name, Tensor::scalar(static_cast<float>(value))});
}

std::optional<double> Checkpoint::meta(std::string_view key) const {
  const Tensor* t = find(std::string(kMetaPrefix) + std::string(key));
  if (!t || t->size() != 1) return std::nullopt;
  return (*t)[0];
}

std::map<std::string, double> Checkpoint::all_meta() const {
  std::map<std::string, double> out;
  for (const auto& r : records) {
    if (r.name.starts_with(kMetaPrefix) && r.tensor.size() == 1) {
      out[r.name.substr(kMetaPrefix.size())] = r.tensor[0];
    }
  }
  return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic);
  put<std::uint16_t>(out, kCheckpointVersion);
  for (const auto& r : ckpt.records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContractError("checkpoint record name too long: " + r.name.substr(0, 32) + "...");
    }
    if (r.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw ContractError("checkpoint record rank too large: " + r.name);
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.append(r.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.tensor.rank()));
    for (auto d : r.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : r.tensor.data()) put<float>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) throw ParseError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  while (!in.done()) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint8_t>();
    if (rank == 0) throw ParseError("checkpoint record '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint32_t>();
      if (d == 0) throw ParseError("checkpoint record '" + name + "' has a zero dimension");
    }
    std::vector<float> data(shape_numel(shape));
    auto payload = in.take(data.size() * sizeof(float));
    std::memcpy(data.data(), payload.data(), payload.size());
    ckpt.records.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint", path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint", path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Checkpoint checkpoint_from_store(const ParamStore<float>& store, const std::map<std::string, double>& meta) {
  Checkpoint ckpt;
  for (const auto& [name, p] : store) ckpt.records.push_back({name, p.value});
  for (const auto& [key, value] : meta) ckpt.set_meta(key, value);
  return ckpt;
}

void restore_store(const Checkpoint& ckpt, ParamStore<float>& store) {
  for (const auto& name : store.names()) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw ParseError("checkpoint is missing parameter '" + name + "'");
    store.set_value(name, *t);
  }
}

}  // namespace recon_ood
