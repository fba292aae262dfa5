#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "after/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian f32");

namespace after {

namespace {

constexpr char kMagic[] = "AFTRCKPT1\n";
constexpr std::size_t kMagicLen = 10;

nlohmann::json config_to_json(const EncoderConfig& c) {
  return {
      {"vocab_size", c.vocab_size},   {"d_model", c.d_model},
      {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
      {"max_len", c.max_len},         {"dropout_p", c.dropout_p},
      {"n_task_classes", c.n_task_classes},
      {"seed", c.seed},
  };
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.n_task_classes = j.at("n_task_classes").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, std::uint64_t vocab_fingerprint,
                     const std::string& path) {
  nlohmann::json header;
  header["config"] = config_to_json(model.config());
  char fp[17];
  std::snprintf(fp, sizeof(fp), "%016llx",
                static_cast<unsigned long long>(vocab_fingerprint));
  header["vocab_fingerprint"] = fp;

  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params()) {
    manifest.push_back({{"name", p.name},
                        {"rows", p.tensor->rows},
                        {"cols", p.tensor->cols},
                        {"offset", offset}});
    offset += p.tensor->size() * sizeof(float);
  }
  header["params"] = manifest;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out)
      throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    out.write(kMagic, kMagicLen);
    const std::string head = header.dump();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.put('\n');
    std::vector<float> buf;
    for (const auto& p : model.params()) {
      buf.resize(p.tensor->size());
      for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(p.tensor->data[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out)
      throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_checkpoint: cannot rename " + tmp + " to " +
                             path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);

  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::string(magic, kMagicLen) != kMagic)
    throw std::runtime_error("load_checkpoint: " + path +
                             " is not an AFTRCKPT1 checkpoint");

  std::string head;
  if (!std::getline(in, head))
    throw std::runtime_error("load_checkpoint: missing header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("load_checkpoint: bad header: ") +
                             e.what());
  }

  Checkpoint ckpt{config_from_json(header.at("config")), 0,
                  EncoderModel(config_from_json(header.at("config")))};
  ckpt.vocab_fingerprint = std::stoull(
      header.at("vocab_fingerprint").get<std::string>(), nullptr, 16);

  const auto& manifest = header.at("params");
  const auto& params = ckpt.model.params();
  if (manifest.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter manifest mismatch");

  std::vector<float> buf;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    const auto& p = params[i];
    if (entry.at("name").get<std::string>() != p.name ||
        entry.at("rows").get<int>() != p.tensor->rows ||
        entry.at("cols").get<int>() != p.tensor->cols)
      throw std::runtime_error("load_checkpoint: manifest entry " +
                               std::to_string(i) + " does not match " + p.name);
    buf.resize(p.tensor->size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in)
      throw std::runtime_error("load_checkpoint: truncated blob for " + p.name);
    for (std::size_t j = 0; j < buf.size(); ++j)
      p.tensor->data[j] = static_cast<double>(buf[j]);
  }
  return ckpt;
}

}  // namespace after
