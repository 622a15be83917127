// SPDX-License-Identifier: Apache-2.0
#include "ssp/checkpoint.hpp"

#include <sstream>

#include "ssp/config.hpp"
#include "ssp/errors.hpp"
#include "ssp/hash.hpp"
#include "ssp/serialize.hpp"

namespace ssp {

namespace fs = std::filesystem;

namespace {

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ModelConfig& config, ModelParams& params) {
  std::ostringstream manifest;
  for (const NamedTensor& nt : named_tensors(params)) {
    const std::string rel = "tensors/" + nt.name + ".sspt";
    write_tensor(dir / rel, *nt.tensor);
    manifest << nt.name << ' ' << rel << ' ' << shape_field(nt.tensor->shape()) << '\n';
  }
  write_file(dir / "manifest.txt", manifest.str());
  write_file(dir / "model.json", model_config_to_json(config));
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path)) throw MissingArtifactError("checkpoint manifest not found: " + manifest_path.string());
  Checkpoint ck;
  ck.config = model_config_from_json(read_file(dir / "model.json"));
  ck.params = init_model(ck.config, 0);

  std::map<std::string, std::pair<std::string, std::string>> entries;
  std::istringstream in(read_file(manifest_path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, rel, shape;
    if (!(fields >> name >> rel >> shape)) throw FormatError(manifest_path.string() + ": malformed line '" + line + "'");
    entries[name] = {rel, shape};
  }
  for (const NamedTensor& nt : named_tensors(ck.params)) {
    auto it = entries.find(nt.name);
    if (it == entries.end()) throw FormatError(manifest_path.string() + ": missing tensor '" + nt.name + "'");
    Tensor t = read_tensor(dir / it->second.first);
    if (shape_field(t.shape()) != it->second.second || t.shape() != nt.tensor->shape()) {
      throw FormatError((dir / it->second.first).string() + ": shape " + to_string(t.shape()) + " does not match " +
                        to_string(nt.tensor->shape()));
    }
    *nt.tensor = std::move(t);
  }
  return ck;
}

std::map<std::string, std::string> tensor_hashes(ModelParams& params) {
  std::map<std::string, std::string> out;
  for (const NamedTensor& nt : named_tensors(params)) out[nt.name] = tensor_sha256(*nt.tensor);
  return out;
}

}  // namespace ssp
