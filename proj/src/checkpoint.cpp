#include "mvnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "mvnn/errors.hpp"

namespace mvnn {

using Json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host expected");

Json to_json(const ModelConfig& c) {
  Json freq;
  freq["filters"] = c.freq.filters;
  freq["kernel"] = c.freq.kernel;
  freq["pool"] = c.freq.pool;
  freq["shared_fc"] = c.freq.shared_fc;
  freq["out_dim"] = c.freq.out_dim;
  freq["dropout"] = c.freq.dropout;
  Json pixel;
  pixel["input_size"] = c.pixel.input_size;
  pixel["widths"] = c.pixel.widths;
  pixel["tap_channels"] = c.pixel.tap_channels;
  pixel["branch_dim"] = c.pixel.branch_dim;
  pixel["dropout"] = c.pixel.dropout;
  pixel["gru_hidden"] = c.pixel.gru_hidden;
  Json j;
  j["freq"] = freq;
  j["pixel"] = pixel;
  j["attention_dim"] = c.attention_dim;
  return j;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["batch_size"] = c.batch_size;
  j["micro_batch"] = c.micro_batch;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["augment"] = c.augment;
  j["seed"] = c.seed;
  return j;
}

// Reads known keys into the referenced fields and rejects anything else.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  Reader& field(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).template get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const Json* object(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("unknown key " + where_ + "." + key);
      }
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

ModelConfig model_config_from(const Json& j) {
  ModelConfig c;
  Reader top(j, "model");
  top.field("attention_dim", c.attention_dim);
  if (const Json* f = top.object("freq")) {
    Reader(*f, "model.freq")
        .field("filters", c.freq.filters)
        .field("kernel", c.freq.kernel)
        .field("pool", c.freq.pool)
        .field("shared_fc", c.freq.shared_fc)
        .field("out_dim", c.freq.out_dim)
        .field("dropout", c.freq.dropout)
        .finish();
  }
  if (const Json* p = top.object("pixel")) {
    Reader(*p, "model.pixel")
        .field("input_size", c.pixel.input_size)
        .field("widths", c.pixel.widths)
        .field("tap_channels", c.pixel.tap_channels)
        .field("branch_dim", c.pixel.branch_dim)
        .field("dropout", c.pixel.dropout)
        .field("gru_hidden", c.pixel.gru_hidden)
        .finish();
  }
  top.finish();
  c.validate();
  return c;
}

TrainConfig train_config_from(const Json& j) {
  TrainConfig c;
  Reader(j, "train")
      .field("learning_rate", c.learning_rate)
      .field("beta1", c.beta1)
      .field("beta2", c.beta2)
      .field("epsilon", c.epsilon)
      .field("batch_size", c.batch_size)
      .field("micro_batch", c.micro_batch)
      .field("max_epochs", c.max_epochs)
      .field("patience", c.patience)
      .field("pretrain_epochs", c.pretrain_epochs)
      .field("augment", c.augment)
      .field("seed", c.seed)
      .finish();
  c.validate();
  return c;
}

Json parse_text(const std::string& text, const char* what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

template <typename T>
void append(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T)) throw IngestError("checkpoint is truncated");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string model_config_json(const ModelConfig& c) { return to_json(c).dump(); }
ModelConfig parse_model_config(const std::string& json) {
  return model_config_from(parse_text(json, "model config"));
}
std::string train_config_json(const TrainConfig& c) { return to_json(c).dump(); }
TrainConfig parse_train_config(const std::string& json) {
  return train_config_from(parse_text(json, "train config"));
}

std::vector<std::uint8_t> serialize_checkpoint(MvnnModel& model, const TrainConfig& train) {
  Json header;
  header["model"] = to_json(model.config());
  header["train"] = to_json(train);
  header["ablation"] = std::string(to_string(model.ablation()));
  header["seed"] = model.seed();
  header["init"] = "he_uniform(relu layers), glorot_uniform(gru, attention, classifier)";
  header["pixel_norm"] = {{"mean", model.pixel_norm().mean},
                          {"stddev", model.pixel_norm().stddev}};
  Json tensors = Json::array();
  std::size_t offset = 0;
  const auto params = model.parameters();
  for (const NamedTensor& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += static_cast<std::size_t>(p.tensor.size());
  }
  header["tensors"] = tensors;
  Json buffers = Json::array();
  const auto bufs = model.buffers();
  for (const NamedBuffer& b : bufs) {
    buffers.push_back({{"name", b.name}, {"size", b.data->size()}, {"offset", offset}});
    offset += static_cast<std::size_t>(b.data->size());
  }
  header["buffers"] = buffers;
  header["payload_values"] = offset;

  const std::string text = header.dump();
  std::vector<std::uint8_t> out{'M', 'V', 'N', 'N'};
  append<std::uint16_t>(out, kCheckpointVersion);
  append<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset * sizeof(double));
  for (const NamedTensor& p : params) {
    for (Index i = 0; i < p.tensor.size(); ++i) append<double>(out, p.tensor.data()[i]);
  }
  for (const NamedBuffer& b : bufs) {
    for (Index i = 0; i < b.data->size(); ++i) append<double>(out, (*b.data)[i]);
  }
  return out;
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MVNN", 4) != 0) {
    throw IngestError("not an MVNN checkpoint");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw IngestError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = take<std::uint32_t>(bytes, pos);
  if (bytes.size() - pos < length) throw IngestError("checkpoint header is truncated");
  Json header;
  try {
    header = Json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + length));
  } catch (const Json::exception& e) {
    throw IngestError(std::string("checkpoint header: ") + e.what());
  }
  pos += length;

  const std::size_t payload = header.at("payload_values").get<std::size_t>();
  if ((bytes.size() - pos) != payload * sizeof(double)) {
    throw IngestError("checkpoint payload has " + std::to_string(bytes.size() - pos) +
                      " bytes, header promises " + std::to_string(payload * sizeof(double)));
  }
  const std::uint8_t* values = bytes.data() + pos;
  auto read_into = [&](Scalar* dst, std::size_t offset, std::size_t count) {
    if (offset + count > payload) throw IngestError("checkpoint tensor exceeds the payload");
    std::memcpy(dst, values + offset * sizeof(double), count * sizeof(double));
  };

  LoadedCheckpoint ck{MvnnModel(model_config_from(header.at("model")),
                                parse_ablation(header.at("ablation").get<std::string>()),
                                header.at("seed").get<std::uint64_t>()),
                      train_config_from(header.at("train"))};
  MvnnModel& model = ck.model;
  model.pixel_norm().mean = header.at("pixel_norm").at("mean").get<std::array<double, 3>>();
  model.pixel_norm().stddev = header.at("pixel_norm").at("stddev").get<std::array<double, 3>>();

  auto params = model.parameters();
  const Json& tensors = header.at("tensors");
  if (tensors.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, the model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Json& t = tensors[i];
    const std::string name = t.at("name").get<std::string>();
    if (name != params[i].name || t.at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw ConfigError("checkpoint tensor " + name + " does not match model tensor " +
                        params[i].name + " " + to_string(params[i].tensor.shape()));
    }
    Vector& dst = params[i].tensor.mutable_data();
    read_into(dst.data(), t.at("offset").get<std::size_t>(), static_cast<std::size_t>(dst.size()));
  }
  auto bufs = model.buffers();
  const Json& buffers = header.at("buffers");
  if (buffers.size() != bufs.size()) throw ConfigError("checkpoint buffers do not match the model");
  for (std::size_t i = 0; i < bufs.size(); ++i) {
    const Json& b = buffers[i];
    if (b.at("name").get<std::string>() != bufs[i].name ||
        b.at("size").get<Index>() != bufs[i].data->size()) {
      throw ConfigError("checkpoint buffer " + b.at("name").get<std::string>() +
                        " does not match the model");
    }
    read_into(bufs[i].data->data(), b.at("offset").get<std::size_t>(),
              static_cast<std::size_t>(bufs[i].data->size()));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, MvnnModel& model,
                     const TrainConfig& train) {
  const auto bytes = serialize_checkpoint(model, train);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestError("cannot write checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const Json::exception& e) {
    throw IngestError(path.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace mvnn
