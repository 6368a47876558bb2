#include "come/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "come/error.hpp"

namespace come::model {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'M', 'E', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& offset) {
  if (offset + sizeof(T) > in.size())
    throw Error(ErrorCode::kInvalidData, "checkpoint: truncated file");
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

}  // namespace

std::string serialize_checkpoint(const ModelState& state) {
  const auto& cfg = state.config();
  nlohmann::json header;
  header["config"] = {{"layer_count", cfg.layer_count}, {"head_count", cfg.head_count},
                      {"d_model", cfg.d_model},         {"d_mlp", cfg.d_mlp},
                      {"vocab_size", cfg.vocab_size},   {"max_seq", cfg.max_seq},
                      {"seed", cfg.seed}};
  header["version"] = state.version();
  header["vocabulary"] = state.tokenizer().words();
  nlohmann::json tensors = nlohmann::json::array();
  const auto named = state.parameters().named();
  for (const auto& [name, m] : named)
    tensors.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  header["tensors"] = tensors;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& [name, m] : named) {
    const auto values = m->values();
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

ModelState deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::kInvalidData, "checkpoint: bad magic");
  std::size_t offset = sizeof(kMagic);
  const auto format = take<std::uint32_t>(bytes, offset);
  if (format != kCheckpointFormatVersion)
    throw Error(ErrorCode::kInvalidData,
                "checkpoint: unsupported format version " + std::to_string(format));
  const auto header_len = take<std::uint64_t>(bytes, offset);
  if (offset + header_len > bytes.size())
    throw Error(ErrorCode::kInvalidData, "checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(offset, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidData, std::string("checkpoint: header: ") + e.what());
  }
  offset += header_len;

  ModelConfig cfg;
  try {
    const auto& c = header.at("config");
    cfg.layer_count = c.at("layer_count").get<std::size_t>();
    cfg.head_count = c.at("head_count").get<std::size_t>();
    cfg.d_model = c.at("d_model").get<std::size_t>();
    cfg.d_mlp = c.at("d_mlp").get<std::size_t>();
    cfg.vocab_size = c.at("vocab_size").get<std::size_t>();
    cfg.max_seq = c.at("max_seq").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidData, std::string("checkpoint: config: ") + e.what());
  }
  cfg.validate();

  const auto words = header.at("vocabulary").get<std::vector<std::string>>();
  Tokenizer reference;
  for (std::size_t i = 0; i < Tokenizer::kReserved; ++i)
    if (i >= words.size() || words[i] != reference.word(static_cast<TokenId>(i)))
      throw Error(ErrorCode::kInvalidData, "checkpoint: reserved tokens missing");
  Tokenizer tok = Tokenizer::from_words({words.begin() + Tokenizer::kReserved, words.end()});
  if (tok.words() != words)
    throw Error(ErrorCode::kInvalidData, "checkpoint: vocabulary is not in canonical order");

  Parameters params = Parameters::zeros(cfg);
  auto named = params.named();
  const auto& table = header.at("tensors");
  if (table.size() != named.size())
    throw Error(ErrorCode::kInvalidData, "checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, m] = named[i];
    if (table[i].at("name").get<std::string>() != name ||
        table[i].at("rows").get<std::size_t>() != m->rows() ||
        table[i].at("cols").get<std::size_t>() != m->cols())
      throw Error(ErrorCode::kInvalidData, "checkpoint: tensor table mismatch at '" + name + "'");
    auto values = m->values();
    const std::size_t n = values.size() * sizeof(double);
    if (offset + n > bytes.size())
      throw Error(ErrorCode::kInvalidData, "checkpoint: truncated tensor '" + name + "'");
    std::memcpy(values.data(), bytes.data() + offset, n);
    offset += n;
  }
  if (offset != bytes.size()) throw Error(ErrorCode::kInvalidData, "checkpoint: trailing bytes");
  return ModelState(cfg, std::move(tok), std::move(params), header.at("version").get<std::uint64_t>());
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "checkpoint: write failed for '" + path.string() + "'");
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "checkpoint: cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace come::model
