#include "ctcvo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ctcvo/errors.hpp"
#include "json.hpp"

namespace ctcvo {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'T', 'C', 'V', 'O', 'C', 'K', 'P'};

json vec3(const Eigen::Vector3d& v) { return json::array({v[0], v[1], v[2]}); }
Eigen::Vector3d vec3(const json& j) { return Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

json config_json(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.backbone_channels)
    stages.push_back({{"blocks", s.blocks}, {"mid", s.mid}, {"out", s.out}, {"stride", s.stride}});
  return {{"preset", to_string(c.preset)},
          {"K", c.K},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"stem_channels", c.stem_channels},
          {"backbone_channels", stages},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers_relative", c.lstm_layers_relative},
          {"lstm_layers_global", c.lstm_layers_global},
          {"fc_width", c.fc_width},
          {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.preset = parse_preset(j.at("preset").get<std::string>());
  c.K = j.at("K").get<int>();
  c.image_height = j.at("image_height").get<int>();
  c.image_width = j.at("image_width").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  const json& stages = j.at("backbone_channels");
  if (stages.size() != c.backbone_channels.size()) throw CheckpointMismatch("expected four stage entries");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    c.backbone_channels[i] = StageSpec{stages[i].at("blocks").get<int>(), stages[i].at("mid").get<int>(),
                                       stages[i].at("out").get<int>(), stages[i].at("stride").get<int>()};
  }
  c.lstm_hidden = j.at("lstm_hidden").get<int>();
  c.lstm_layers_relative = j.at("lstm_layers_relative").get<int>();
  c.lstm_layers_global = j.at("lstm_layers_global").get<int>();
  c.fc_width = j.at("fc_width").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json stats_json(const NormStats& s) {
  return {{"image_mean", vec3(s.image_mean)}, {"image_std", vec3(s.image_std)},
          {"rel_t_mean", vec3(s.rel_t_mean)}, {"rel_t_std", vec3(s.rel_t_std)},
          {"glob_t_mean", vec3(s.glob_t_mean)}, {"glob_t_std", vec3(s.glob_t_std)}};
}

NormStats stats_from(const json& j) {
  NormStats s;
  s.image_mean = vec3(j.at("image_mean"));
  s.image_std = vec3(j.at("image_std"));
  s.rel_t_mean = vec3(j.at("rel_t_mean"));
  s.rel_t_std = vec3(j.at("rel_t_std"));
  s.glob_t_mean = vec3(j.at("glob_t_mean"));
  s.glob_t_std = vec3(j.at("glob_t_std"));
  return s;
}

json state_json(const TrainingState& s) {
  json history = json::array();
  for (const auto& e : s.history)
    history.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"ctc", e.ctc}, {"global", e.global}});
  return {{"stage", s.stage},       {"scene_id", s.scene_id},   {"seed", s.seed},
          {"epochs_done", s.epochs_done}, {"iteration", s.iteration}, {"total_iterations", s.total_iterations},
          {"history", history}};
}

TrainingState state_from(const json& j) {
  TrainingState s;
  s.stage = j.at("stage").get<std::string>();
  s.scene_id = j.at("scene_id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.epochs_done = j.at("epochs_done").get<int>();
  s.iteration = j.at("iteration").get<long long>();
  s.total_iterations = j.at("total_iterations").get<long long>();
  for (const auto& e : j.at("history"))
    s.history.push_back(EpochRecord{e.at("epoch").get<int>(), e.at("loss").get<double>(), e.at("ctc").get<double>(),
                                    e.at("global").get<double>()});
  return s;
}

bool selected(const std::string& name, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void read_matrix(std::ifstream& in, Eigen::MatrixXd& m, const std::string& path) {
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw IoError(path + ": truncated checkpoint");
}

}  // namespace

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  ModelConfig x = a, y = b;
  x.seed = y.seed = 0;
  return x == y;
}

std::string describe_difference(const ModelConfig& a, const ModelConfig& b) {
  const json ja = config_json(a), jb = config_json(b);
  std::string out;
  for (const auto& [key, value] : ja.items()) {
    if (key == "seed" || jb.at(key) == value) continue;
    out += (out.empty() ? "" : ", ") + key + " " + value.dump() + " vs " + jb.at(key).dump();
  }
  return out.empty() ? "identical" : out;
}

void save_checkpoint(const std::string& path, const VoModel& model, const TrainingState& state, const AdamState* adam,
                     const std::vector<std::string>& prefixes) {
  const ParameterSet& ps = model.params();
  json blocks = json::array();
  std::vector<int> ids;
  for (int i = 0; i < ps.size(); ++i) {
    const auto& b = ps.block(i);
    if (!selected(b.name, prefixes)) continue;
    ids.push_back(i);
    blocks.push_back({{"name", b.name},
                      {"kind", b.kind == ParameterSet::Kind::Weight ? "weight" : "buffer"},
                      {"rows", b.value.rows()},
                      {"cols", b.value.cols()}});
  }
  const bool with_adam = adam != nullptr && prefixes.empty();
  json header = {{"format_version", kCheckpointVersion},
                 {"model", config_json(model.config())},
                 {"stats", stats_json(model.stats())},
                 {"state", state_json(state)},
                 {"blocks", blocks},
                 {"optimizer", with_adam ? json{{"step", adam->step}} : json(nullptr)}};
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (int i : ids) write_matrix(out, ps.value(i));
    if (with_adam) {
      for (int i : ids) {
        const bool has = static_cast<std::size_t>(i) < adam->m.size() && adam->m[i].size() > 0;
        const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(ps.value(i).rows(), ps.value(i).cols());
        write_matrix(out, has ? adam->m[i] : zero);
        write_matrix(out, has ? adam->v[i] : zero);
      }
    }
    if (!out) throw IoError("write failed: " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointMismatch(path + ": not a checkpoint file");
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in) throw IoError(path + ": truncated header");
  if (version != kCheckpointVersion)
    throw CheckpointMismatch(path + ": format version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError(path + ": truncated header");

  Checkpoint ck;
  ck.version = version;
  try {
    const json header = json::parse(text);
    ck.config = config_from(header.at("model"));
    ck.stats = stats_from(header.at("stats"));
    ck.state = state_from(header.at("state"));
    for (const auto& b : header.at("blocks")) {
      const auto kind = b.at("kind").get<std::string>() == "weight" ? ParameterSet::Kind::Weight
                                                                     : ParameterSet::Kind::Buffer;
      ck.params.add(b.at("name").get<std::string>(), b.at("rows").get<Eigen::Index>(), b.at("cols").get<Eigen::Index>(),
                    kind);
    }
    for (int i = 0; i < ck.params.size(); ++i) read_matrix(in, ck.params.value(i), path);
    if (!header.at("optimizer").is_null()) {
      AdamState adam;
      adam.step = header.at("optimizer").at("step").get<long long>();
      for (int i = 0; i < ck.params.size(); ++i) {
        Eigen::MatrixXd m(ck.params.value(i).rows(), ck.params.value(i).cols()), v(m.rows(), m.cols());
        read_matrix(in, m, path);
        read_matrix(in, v, path);
        adam.m.push_back(std::move(m));
        adam.v.push_back(std::move(v));
      }
      ck.adam = std::move(adam);
    }
  } catch (const json::exception& e) {
    throw CheckpointMismatch(path + ": malformed header (" + e.what() + ")");
  }
  return ck;
}

void load_blocks(VoModel& model, const Checkpoint& ckpt, const std::vector<std::string>& prefixes) {
  if (!same_architecture(model.config(), ckpt.config))
    throw CheckpointMismatch("architecture differs: " + describe_difference(model.config(), ckpt.config));
  ParameterSet& ps = model.params();
  for (int i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.block(i).name;
    if (!selected(name, prefixes)) continue;
    const int j = ckpt.params.find(name);
    if (j < 0) throw CheckpointMismatch("checkpoint lacks block '" + name + "'");
    const Eigen::MatrixXd& src = ckpt.params.value(j);
    if (src.rows() != ps.value(i).rows() || src.cols() != ps.value(i).cols())
      throw CheckpointMismatch("block '" + name + "' has a different shape");
    ps.value(i) = src;
  }
}

VoModel model_from_checkpoint(const Checkpoint& ckpt) {
  VoModel model(ckpt.config);
  if (ckpt.params.size() != model.params().size())
    throw CheckpointMismatch("checkpoint holds " + std::to_string(ckpt.params.size()) + " blocks, model has " +
                             std::to_string(model.params().size()));
  load_blocks(model, ckpt, {});
  model.stats() = ckpt.stats;
  return model;
}

}  // namespace ctcvo
