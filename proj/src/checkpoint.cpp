#include <bit>
#include <cstring>

#include "vlc/encoder.hpp"
#include "vlc/error.hpp"

namespace vlc::encoder {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'L', 'C', 'B', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint Checkpoint::initialize(const ModelConfig& config, Tokenizer tokenizer, LabelVocab labels,
                                  corpus::AnswerVocabulary vocabulary, int embed_dim) {
  config.validate();
  Checkpoint c;
  c.config = config;
  std::mt19937_64 rng(config.seed);
  c.model = Model::random(config, tokenizer.size(), labels.size(), static_cast<int>(vocabulary.size()), embed_dim, rng);
  c.tokenizer = std::move(tokenizer);
  c.labels = std::move(labels);
  c.vocabulary = std::move(vocabulary);
  return c;
}

std::string Checkpoint::serialize() const {
  json header;
  header["config"] = config.to_json();
  header["tokenizer"] = tokenizer.words();
  header["region_labels"] = labels.labels();
  header["answer_vocabulary"] = vocabulary.entries();
  header["embed_dim"] = model.embed_dim;
  header["epoch"] = epoch;
  header["rng_state"] = rng_state;
  header["optimizer"] = optimizer_state ? json{{"kind", "adam"}, {"step", optimizer_state->step}} : json{{"kind", "sgd"}};
  header["meta"] = meta;
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  auto params = model.params();
  if (optimizer_state) {
    for (auto [prefix, moments] : {std::pair{"adam.m.", &optimizer_state->m}, std::pair{"adam.v.", &optimizer_state->v}})
      for (auto p : moments->params()) {
        p.name = prefix + p.name;
        params.push_back(p);
      }
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.rows));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.cols));
    out.append(reinterpret_cast<const char*>(p.data), static_cast<std::size_t>(p.size()) * sizeof(double));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw ParseError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = r.get<std::uint64_t>();
  json header;
  try {
    header = json::parse(r.take(header_len));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint c;
  try {
    c.config.update_from_json(header.at("config"), "checkpoint.config");
    c.tokenizer = Tokenizer(header.at("tokenizer").get<std::vector<std::string>>());
    c.labels = LabelVocab(header.at("region_labels").get<std::vector<std::string>>());
    c.vocabulary = corpus::AnswerVocabulary(header.at("answer_vocabulary").get<std::vector<std::string>>());
    c.epoch = header.at("epoch").get<int>();
    c.rng_state = header.at("rng_state").get<std::string>();
    c.meta = header.at("meta");
    c.model = Model(c.config, c.tokenizer.size(), c.labels.size(), static_cast<int>(c.vocabulary.size()),
                    header.at("embed_dim").get<int>());
    const json opt = header.value("optimizer", json{{"kind", "sgd"}});
    const auto kind = opt.at("kind").get<std::string>();
    if (kind == "adam") {
      c.optimizer_state = OptimizerState{opt.at("step").get<long>(), c.model.zeros_like(), c.model.zeros_like()};
    } else if (kind != "sgd") {
      throw ParseError("checkpoint header: unknown optimizer '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  auto params = c.model.params();
  if (c.optimizer_state) {
    for (auto [prefix, moments] :
         {std::pair{"adam.m.", &c.optimizer_state->m}, std::pair{"adam.v.", &c.optimizer_state->v}})
      for (auto p : moments->params()) {
        p.name = prefix + p.name;
        params.push_back(p);
      }
  }
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) throw ParseError("checkpoint tensor count does not match the configuration");
  for (auto& p : params) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name(r.take(name_len));
    if (name != p.name) throw ParseError("checkpoint tensor '" + name + "' where '" + p.name + "' was expected");
    if (r.get<std::uint32_t>() != 2) throw ParseError("checkpoint tensor '" + name + "' is not 2-D");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(p.rows) || cols != static_cast<std::uint64_t>(p.cols))
      throw ParseError("checkpoint tensor '" + name + "' has the wrong shape");
    const auto raw = r.take(static_cast<std::size_t>(rows * cols) * sizeof(double));
    std::memcpy(p.data, raw.data(), raw.size());
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint tensors");
  return c;
}

void Checkpoint::save(const std::string& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace vlc::encoder
