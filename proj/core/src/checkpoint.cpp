#include "mpls/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "mpls/errors.hpp"

namespace mpls {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'L', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

std::map<std::string, torch::Tensor> model_tensors(torch::nn::Module& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : model.named_parameters()) out["param/" + p.key()] = p.value();
  for (const auto& b : model.named_buffers()) out["buffer/" + b.key()] = b.value();
  return out;
}

torch::optim::AdamWParamState* adam_state(torch::optim::AdamW& opt, const torch::Tensor& p) {
  auto& st = opt.state();
  const auto it = st.find(p.unsafeGetTensorImpl());
  if (it == st.end()) return nullptr;
  return static_cast<torch::optim::AdamWParamState*>(it->second.get());
}

struct Parsed {
  json header;
  std::vector<char> data;
};

Parsed parse(const std::filesystem::path& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("checkpoint: bad magic in " + path.string());
  if (version != kVersion) throw ConfigError("checkpoint: unsupported version in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("checkpoint: truncated header in " + path.string());
  Parsed p;
  try {
    p.header = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint: corrupt header in " + path.string() + ": " + e.what());
  }
  if (with_data) {
    p.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return p;
}

CheckpointMeta meta_of(const json& h) {
  CheckpointMeta m;
  m.kind = h.at("kind").get<std::string>();
  m.config = h.at("config");
  m.config_hash = h.at("config_hash").get<std::string>();
  m.seed = h.at("seed").get<std::uint64_t>();
  m.step = h.at("step").get<std::int64_t>();
  m.extra = h.value("extra", json::object());
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& model, const CheckpointMeta& meta,
                     torch::optim::AdamW* optimizer) {
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (auto& [name, t] : model_tensors(model)) tensors.emplace_back(name, t);
  json steps = json::object();
  if (optimizer) {
    for (const auto& p : model.named_parameters()) {
      auto* st = adam_state(*optimizer, p.value());
      if (!st) continue;
      tensors.emplace_back("adam/exp_avg/" + p.key(), st->exp_avg());
      tensors.emplace_back("adam/exp_avg_sq/" + p.key(), st->exp_avg_sq());
      steps[p.key()] = st->step();
    }
  }

  json header;
  header["kind"] = meta.kind;
  header["config"] = meta.config;
  header["config_hash"] = meta.config_hash;
  header["seed"] = meta.seed;
  header["step"] = meta.step;
  header["extra"] = meta.extra;
  header["adam_steps"] = steps;
  json list = json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> blobs;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    list.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(c.numel()) * sizeof(float);
    blobs.push_back(c);
  }
  header["tensors"] = list;

  const auto text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("checkpoint: cannot write " + path.string());
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto& b : blobs) {
      out.write(reinterpret_cast<const char*>(b.data_ptr<float>()), static_cast<std::streamsize>(b.numel() * sizeof(float)));
    }
    if (!out) throw ConfigError("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return meta_of(parse(path, false).header); }

CheckpointMeta load_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                               torch::optim::AdamW* optimizer) {
  const auto p = parse(path, true);
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::uint64_t>> index;
  for (const auto& t : p.header.at("tensors")) {
    index[t.at("name").get<std::string>()] = {t.at("shape").get<std::vector<std::int64_t>>(),
                                              t.at("offset").get<std::uint64_t>()};
  }
  auto fetch = [&](const std::string& name, const std::vector<std::int64_t>& expect) {
    const auto it = index.find(name);
    if (it == index.end()) throw ConfigError("checkpoint: missing tensor " + name + " in " + path.string());
    if (it->second.first != expect) throw ConfigError("checkpoint: shape mismatch for " + name + " in " + path.string());
    std::int64_t n = 1;
    for (const auto s : expect) n *= s;
    const auto bytes = static_cast<std::uint64_t>(n) * sizeof(float);
    if (it->second.second + bytes > p.data.size()) throw ConfigError("checkpoint: truncated data in " + path.string());
    auto t = torch::empty(expect, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), p.data.data() + it->second.second, bytes);
    return t;
  };

  torch::NoGradGuard guard;
  for (auto& [name, t] : model_tensors(model)) t.copy_(fetch(name, t.sizes().vec()));

  if (optimizer) {
    const auto& steps = p.header.value("adam_steps", json::object());
    for (const auto& param : model.named_parameters()) {
      if (!steps.contains(param.key())) continue;
      auto st = std::make_unique<torch::optim::AdamWParamState>();
      st->step(steps.at(param.key()).get<std::int64_t>());
      const auto shape = param.value().sizes().vec();
      st->exp_avg(fetch("adam/exp_avg/" + param.key(), shape).to(param.value().dtype()));
      st->exp_avg_sq(fetch("adam/exp_avg_sq/" + param.key(), shape).to(param.value().dtype()));
      optimizer->state()[param.value().unsafeGetTensorImpl()] = std::move(st);
    }
  }
  return meta_of(p.header);
}

}  // namespace mpls
