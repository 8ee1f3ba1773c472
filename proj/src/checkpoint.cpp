#include "dgsp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dgsp/common.hpp"

namespace dgsp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as raw little-endian f32");

namespace {

constexpr char kMagic[6] = {'D', 'G', 'S', 'P', '1', '\n'};

void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

nlohmann::json tensor_entry(const std::string& name, const Shape& shape, std::uint64_t offset,
                            std::uint64_t nbytes) {
  return {{"name", name}, {"dtype", "f32"}, {"shape", shape}, {"offset", offset}, {"nbytes", nbytes}};
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const AdamOpt<float>* opt, const nlohmann::json& meta) {
  std::vector<std::pair<std::string, const Tensor<float>*>> blobs;
  std::vector<Tensor<float>> scratch;  // zero slots for never-stepped params
  scratch.reserve(params.entries().size() * 2);
  for (const auto& e : params.entries()) {
    blobs.emplace_back(e.name, &e.var.value());
  }
  if (opt) {
    for (const auto& e : params.entries()) {
      if (!e.trainable) continue;
      if (opt->has_slot(e.name)) {
        blobs.emplace_back("opt.m." + e.name, &opt->peek_m(e.name));
        blobs.emplace_back("opt.v." + e.name, &opt->peek_v(e.name));
      } else {
        scratch.push_back(Tensor<float>::zeros(e.var.shape()));
        blobs.emplace_back("opt.m." + e.name, &scratch.back());
        scratch.push_back(Tensor<float>::zeros(e.var.shape()));
        blobs.emplace_back("opt.v." + e.name, &scratch.back());
      }
    }
  }

  nlohmann::json meta_entry = meta;
  meta_entry["name"] = "__meta__";
  meta_entry["dtype"] = "f32";
  meta_entry["shape"] = Shape{0};
  meta_entry["offset"] = 0;
  meta_entry["nbytes"] = 0;
  meta_entry["opt_step"] = opt ? opt->t() : 0;

  nlohmann::json manifest = nlohmann::json::array();
  manifest.push_back(meta_entry);
  std::uint64_t offset = 0;
  for (const auto& [name, t] : blobs) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t->numel()) * sizeof(float);
    manifest.push_back(tensor_entry(name, t->shape(), offset, nbytes));
    offset += nbytes;
  }

  std::string header(kMagic, sizeof(kMagic));
  const std::string mtext = manifest.dump();
  put_u64le(header, mtext.size());
  header += mtext;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create checkpoint: " + path);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : blobs) {
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  out.flush();
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path);
  }
  const std::uint64_t mlen = get_u64le(bytes.data() + sizeof(kMagic));
  const std::uint64_t blob_start = sizeof(kMagic) + 8 + mlen;
  if (blob_start > bytes.size()) throw IoError("truncated checkpoint manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + sizeof(kMagic) + 8,
                                     bytes.begin() + static_cast<long>(blob_start));
  } catch (const nlohmann::json::exception&) {
    throw IoError("corrupt checkpoint manifest: " + path);
  }
  if (!manifest.is_array() || manifest.empty() || manifest[0].value("name", "") != "__meta__") {
    throw IoError("malformed checkpoint manifest: " + path);
  }

  Checkpoint ckpt;
  ckpt.meta = manifest[0];
  const std::uint64_t blob_size = bytes.size() - blob_start;
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    if (!e.contains("name") || !e.contains("shape") || !e.contains("offset") || !e.contains("nbytes") ||
        e.value("dtype", "") != "f32") {
      throw IoError("malformed checkpoint entry in " + path);
    }
    const Shape shape = e["shape"].get<Shape>();
    const std::uint64_t offset = e["offset"].get<std::uint64_t>();
    const std::uint64_t nbytes = e["nbytes"].get<std::uint64_t>();
    Tensor<float> t(shape);
    if (static_cast<std::uint64_t>(t.numel()) * sizeof(float) != nbytes) {
      throw IoError("checkpoint entry size mismatch for '" + e["name"].get<std::string>() + "' in " + path);
    }
    if (offset + nbytes > blob_size) throw IoError("truncated checkpoint blobs: " + path);
    std::memcpy(t.data(), bytes.data() + blob_start + offset, nbytes);
    ckpt.tensors.emplace_back(e["name"].get<std::string>(), std::move(t));
  }
  return ckpt;
}

namespace {

void copy_into(const Tensor<float>& src, Tensor<float>& dst, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw IoError("checkpoint shape mismatch for '" + name + "': stored " + shape_str(src.shape()) +
                  ", model expects " + shape_str(dst.shape()));
  }
  std::memcpy(dst.data(), src.data(), static_cast<std::size_t>(dst.numel()) * sizeof(float));
}

}  // namespace

void restore_strict(const Checkpoint& ckpt, ParamStore<float>& params, AdamOpt<float>* opt) {
  for (auto& e : params.entries()) {
    const Tensor<float>* t = ckpt.find(e.name);
    if (!t) throw IoError("checkpoint is missing parameter '" + e.name + "'");
    copy_into(*t, e.var.value(), e.name);
  }
  if (opt) {
    for (auto& e : params.entries()) {
      if (!e.trainable) continue;
      const Tensor<float>* m = ckpt.find("opt.m." + e.name);
      const Tensor<float>* v = ckpt.find("opt.v." + e.name);
      if (!m || !v) throw IoError("checkpoint is missing optimizer state for '" + e.name + "'");
      copy_into(*m, opt->slot_m(e.name, e.var.shape()), "opt.m." + e.name);
      copy_into(*v, opt->slot_v(e.name, e.var.shape()), "opt.v." + e.name);
    }
    opt->set_t(ckpt.meta.value("opt_step", 0L));
  }
}

void restore_transfer(const Checkpoint& ckpt, ParamStore<float>& params) {
  for (auto& e : params.entries()) {
    const Tensor<float>* t = ckpt.find(e.name);
    if (!t) {
      if (e.group == "decoder") continue;  // fresh detection decoder is expected
      throw IoError("checkpoint is missing parameter '" + e.name + "' required for transfer");
    }
    copy_into(*t, e.var.value(), e.name);
  }
}

}  // namespace dgsp
