#include "tcem/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tcem/errors.hpp"
#include "tcem/io.hpp"

namespace tcem {

namespace {

constexpr const char* kMagic = "tcemnet-checkpoint";

std::map<std::string, std::string> model_meta(const ModelConfig& c) {
  return {
      {"model.mode", to_string(c.mode)},
      {"model.features", std::to_string(c.features)},
      {"model.labels", std::to_string(c.labels)},
      {"model.hidden", std::to_string(c.hidden)},
      {"model.latent", std::to_string(c.latent)},
      {"model.memory_slots", std::to_string(c.memory_slots)},
      {"model.memory_width", std::to_string(c.memory_width)},
      {"model.label_dim", std::to_string(c.label_dim)},
      {"model.patient_memory_width", std::to_string(c.patient_memory_width)},
      {"model.score", to_string(c.score)},
      {"model.prior", to_string(c.prior)},
      {"model.global_memory", to_string(c.global_memory)},
  };
}

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ParseError("checkpoint is missing meta key " + key);
  char* end = nullptr;
  const unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw ParseError("checkpoint meta " + key + " is not an integer: " + it->second);
  return static_cast<std::size_t>(v);
}

ModelConfig model_from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw ParseError("checkpoint is missing meta key " + k);
    return it->second;
  };
  c.mode = parse_mode(get("model.mode"));
  c.features = meta_size(meta, "model.features");
  c.labels = meta_size(meta, "model.labels");
  c.hidden = meta_size(meta, "model.hidden");
  c.latent = meta_size(meta, "model.latent");
  c.memory_slots = meta_size(meta, "model.memory_slots");
  c.memory_width = meta_size(meta, "model.memory_width");
  c.label_dim = meta_size(meta, "model.label_dim");
  c.patient_memory_width = meta_size(meta, "model.patient_memory_width");
  c.score = parse_score_mode(get("model.score"));
  c.prior = parse_prior(get("model.prior"));
  c.global_memory = parse_global_memory(get("model.global_memory"));
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kMagic << ' ' << kCheckpointVersion << '\n';
  auto meta = ckpt.meta;
  for (auto& [k, v] : model_meta(ckpt.params.config)) meta[k] = v;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ArgumentError("checkpoint meta key/value not serializable: " + k);
    os << "meta " << k << ' ' << v << '\n';
  }
  char buf[64];
  for (const ParamTensor* t : ckpt.params.tensors()) {
    os << "tensor " << t->name << ' ' << t->value.rows() << ' ' << t->value.cols() << '\n';
    for (std::size_t r = 0; r < t->value.rows(); ++r) {
      for (std::size_t c = 0; c < t->value.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%a", t->value(r, c));
        if (c > 0) os << ' ';
        os << buf;
      }
      os << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kMagic) throw ParseError("not a checkpoint file (bad magic)");
    if (version != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  std::map<std::string, Matrix> tensors;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos) throw ParseError("malformed meta line: " + line);
      ckpt.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream hs(line.substr(7));
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(hs >> name >> rows >> cols)) throw ParseError("malformed tensor header: " + line);
      Matrix m(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) throw ParseError("truncated tensor " + name);
        const char* p = line.c_str();
        for (std::size_t c = 0; c < cols; ++c) {
          char* end = nullptr;
          m(r, c) = std::strtod(p, &end);
          if (end == p) throw ParseError("bad value in tensor " + name + " row " + std::to_string(r));
          p = end;
        }
      }
      if (!tensors.emplace(name, std::move(m)).second)
        throw ParseError("duplicate tensor " + name);
    } else if (line == "end") {
      ended = true;
      break;
    } else if (!line.empty()) {
      throw ParseError("unexpected checkpoint line: " + line);
    }
  }
  if (!ended) throw ParseError("checkpoint is truncated (no end marker)");

  ckpt.params = TcemParams(model_from_meta(ckpt.meta));
  for (auto& [k, v] : model_meta(ckpt.params.config)) ckpt.meta.erase(k);
  std::set<std::string> used;
  for (ParamTensor* t : ckpt.params.tensors()) {
    auto it = tensors.find(t->name);
    if (it == tensors.end()) throw ParseError("checkpoint is missing tensor " + t->name);
    if (!it->second.same_shape(t->value))
      throw ParseError("tensor " + t->name + " has shape " + it->second.shape_str() + ", expected " +
                       t->value.shape_str());
    t->value = std::move(it->second);
    t->zero_grad();
    used.insert(t->name);
  }
  for (const auto& [name, m] : tensors)
    if (!used.count(name)) throw ParseError("checkpoint has unexpected tensor " + name);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace tcem
