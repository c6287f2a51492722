#include "ledetr/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "ledetr/io.hpp"

namespace ledetr {

namespace {

std::string join_stages(const BackboneSpec& s) {
  std::string out;
  for (Index b : s.stage_blocks()) out += (out.empty() ? "" : ",") + std::to_string(b);
  return out;
}

Shape4 parse_shape(const std::string& s) {
  Shape4 shape{};
  char x1 = 0, x2 = 0, x3 = 0;
  std::istringstream in(s);
  if (!(in >> shape.n >> x1 >> shape.c >> x2 >> shape.h >> x3 >> shape.w) || x1 != 'x' ||
      x2 != 'x' || x3 != 'x' || !shape.valid()) {
    throw Error("manifest: bad shape '" + s + "'");
  }
  return shape;
}

}  // namespace

Index Manifest::total_params() const {
  Index total = 0;
  for (const ManifestEntry& e : entries) total += e.shape.size();
  return total;
}

std::string Manifest::value(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return {};
}

Manifest write_checkpoint(const LeDetr& model, const ModelConfig& cfg,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.header = {{"scale", model.spec.scale},
              {"backbone_stages", join_stages(model.spec.backbone)},
              {"inference_layers", std::to_string(model.spec.decoder.layers_inference)},
              {"num_classes", std::to_string(model.spec.decoder.num_classes)},
              {"input_hw", std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w)},
              {"seed", std::to_string(cfg.seed)}};

  std::ofstream bin(dir / kWeightsFile, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("checkpoint: cannot write " + (dir / kWeightsFile).string());
  std::uint64_t offset = 0;
  for_each_param(model, std::string(), [&](const std::string& name, const Tensor4f& t) {
    write_tensor(bin, t);
    m.entries.push_back({name, t.shape(), offset});
    offset += tensor_record_bytes(t.shape());
  });
  if (!bin) throw Error("checkpoint: write failed");

  std::ofstream man(dir / kManifestFile, std::ios::trunc);
  if (!man) throw Error("checkpoint: cannot write " + (dir / kManifestFile).string());
  for (const auto& [k, v] : m.header) man << "# " << k << " " << v << "\n";
  for (const ManifestEntry& e : m.entries) {
    man << e.name << " " << e.shape.str() << " " << e.offset << "\n";
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("manifest: cannot open " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key, value;
      ls >> hash >> key;
      std::getline(ls >> std::ws, value);
      m.header.emplace_back(key, value);
      continue;
    }
    ManifestEntry e;
    std::string shape;
    if (!(ls >> e.name >> shape >> e.offset)) throw Error("manifest: bad line '" + line + "'");
    e.shape = parse_shape(shape);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void load_checkpoint(LeDetr& model, const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir / kManifestFile);
  std::ifstream bin(dir / kWeightsFile, std::ios::binary);
  if (!bin) throw Error("checkpoint: cannot open " + (dir / kWeightsFile).string());
  std::size_t i = 0;
  for_each_param(model, std::string(), [&](const std::string& name, Tensor4f& t) {
    if (i >= m.entries.size() || m.entries[i].name != name) {
      throw Error("checkpoint: expected tensor '" + name + "' at manifest entry " + std::to_string(i));
    }
    bin.seekg(static_cast<std::streamoff>(m.entries[i].offset));
    Tensor4f loaded = read_tensor(bin);
    if (loaded.shape() != t.shape()) {
      throw DimensionError("checkpoint: '" + name + "' is " + loaded.shape().str() + ", model has " +
                           t.shape().str());
    }
    t = std::move(loaded);
    ++i;
  });
  if (i != m.entries.size()) throw Error("checkpoint: manifest has extra tensors");
}

}  // namespace ledetr
