#include "qpnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "qpnet/json_io.hpp"

namespace qpnet::train {

namespace {

constexpr char kMagic[8] = {'Q', 'P', 'N', 'E', 'T', 'C', 'P', '\0'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
void put_pod(std::ofstream& f, T v) {
  put_bytes(f, &v, sizeof(T));
}

void put_string(std::ofstream& f, const std::string& s) {
  put_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
  put_bytes(f, s.data(), s.size());
}

void put_matrix(std::ofstream& f, const engine::Mat<float>& m) {
  put_pod<uint32_t>(f, static_cast<uint32_t>(m.rows()));
  put_pod<uint32_t>(f, static_cast<uint32_t>(m.cols()));
  put_bytes(f, m.data(), sizeof(float) * size_t(m.size()));
}

struct Reader {
  std::vector<char> bytes;
  size_t at = 0;
  std::string path;

  void need(size_t n, const char* what) const {
    if (at + n > bytes.size())
      throw IoError("load_checkpoint: " + path + ": truncated while reading " + std::string(what) +
                    " at offset " + std::to_string(at));
  }
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    uint32_t n = pod<uint32_t>(what);
    need(n, what);
    std::string s(bytes.data() + at, n);
    at += n;
    return s;
  }
  engine::Mat<float> matrix(const char* what) {
    uint32_t r = pod<uint32_t>(what);
    uint32_t c = pod<uint32_t>(what);
    engine::Mat<float> m(r, c);
    need(sizeof(float) * size_t(m.size()), what);
    std::memcpy(m.data(), bytes.data() + at, sizeof(float) * size_t(m.size()));
    at += sizeof(float) * size_t(m.size());
    return m;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const model::ModelConfig& config,
                     const model::NetworkParams& params, const engine::AdamState<float>& adam,
                     int64_t step) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);

  put_bytes(f, kMagic, sizeof(kMagic));
  put_pod<uint32_t>(f, kVersion);
  nlohmann::json j = config;
  put_string(f, j.dump());
  put_pod<int64_t>(f, step);

  uint32_t count = 0;
  params.for_each_buffer([&count](const std::string&, const engine::Mat<float>&) { ++count; });
  put_pod<uint32_t>(f, count);
  params.for_each_buffer([&f](const std::string& name, const engine::Mat<float>& m) {
    put_string(f, name);
    put_matrix(f, m);
  });

  put_pod<uint8_t>(f, 1);  // adam present
  put_pod<double>(f, double(adam.learning_rate));
  put_pod<double>(f, double(adam.beta1));
  put_pod<double>(f, double(adam.beta2));
  put_pod<double>(f, double(adam.epsilon));
  put_pod<int64_t>(f, adam.step_count);
  if (adam.first_moment.size() != count || adam.second_moment.size() != count)
    throw ConfigError("save_checkpoint: optimizer state does not match parameter count");
  for (const auto& m : adam.first_moment) put_matrix(f, m);
  for (const auto& m : adam.second_moment) put_matrix(f, m);

  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  Reader r;
  r.path = path;
  r.bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  r.need(sizeof(kMagic), "magic");
  if (std::memcmp(r.bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("load_checkpoint: " + path + ": not a checkpoint file (bad magic)");
  r.at = sizeof(kMagic);
  uint32_t version = r.pod<uint32_t>("version");
  if (version != kVersion)
    throw IoError("load_checkpoint: " + path + ": unsupported version " + std::to_string(version) +
                  " (expected " + std::to_string(kVersion) + ")");

  Checkpoint ck;
  std::string cfg_json = r.str("config");
  try {
    ck.config = nlohmann::json::parse(cfg_json).get<model::ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: " + path + ": bad config json: " + e.what());
  }
  ck.config.validate();
  ck.step = r.pod<int64_t>("step");

  uint32_t count = r.pod<uint32_t>("buffer count");
  ck.params = model::zero_params<float>(ck.config);
  uint32_t expected = 0;
  ck.params.for_each_buffer([&expected](const std::string&, engine::Mat<float>&) { ++expected; });
  if (count != expected)
    throw IoError("load_checkpoint: " + path + ": buffer count " + std::to_string(count) +
                  " does not match config (" + std::to_string(expected) + ")");
  ck.params.for_each_buffer([&r](const std::string& name, engine::Mat<float>& m) {
    std::string got = r.str("buffer name");
    if (got != name)
      throw IoError("load_checkpoint: " + r.path + ": buffer '" + got + "' where '" + name +
                    "' was expected");
    engine::Mat<float> loaded = r.matrix(name.c_str());
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
      throw IoError("load_checkpoint: " + r.path + ": buffer '" + name + "' has shape " +
                    std::to_string(loaded.rows()) + "x" + std::to_string(loaded.cols()) +
                    ", config requires " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
    m = std::move(loaded);
  });

  uint8_t has_adam = r.pod<uint8_t>("adam flag");
  if (has_adam) {
    ck.adam.learning_rate = float(r.pod<double>("lr"));
    ck.adam.beta1 = float(r.pod<double>("beta1"));
    ck.adam.beta2 = float(r.pod<double>("beta2"));
    ck.adam.epsilon = float(r.pod<double>("epsilon"));
    ck.adam.step_count = r.pod<int64_t>("adam steps");
    ck.adam.first_moment.reserve(count);
    ck.adam.second_moment.reserve(count);
    for (uint32_t i = 0; i < count; ++i) ck.adam.first_moment.push_back(r.matrix("adam m"));
    for (uint32_t i = 0; i < count; ++i) ck.adam.second_moment.push_back(r.matrix("adam v"));
  }
  return ck;
}

}  // namespace qpnet::train
