#include "resexp/netmodel/serialize.hpp"

#include "resexp/error.hpp"

namespace resexp::net {

using io::Json;

Json tensor_to_json(const nd::Tensor& t) { return Json{{"shape", t.shape()}, {"data", t.values()}}; }

nd::Tensor tensor_from_json(const Json& j) {
  io::require_known_keys(j, {"shape", "data"}, "tensor");
  auto shape = io::get_required<nd::Shape>(j, "shape", "tensor");
  auto data = io::get_required<std::vector<double>>(j, "data", "tensor");
  try {
    return nd::Tensor(std::move(shape), std::move(data));
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("tensor: ") + e.what());
  }
}

Json spec_to_json(const NetworkSpec& s) {
  Json j;
  j["depth"] = s.depth;
  j["width"] = s.width;
  j["branch_width"] = s.branch_width;
  j["output_dim"] = s.output_dim;
  j["norm_kind"] = std::string(to_string(s.norm_kind));
  j["eps_eng"] = s.eps_eng;
  j["gamma"] = s.gamma;
  j["insertion_layer"] = s.insertion_layer;
  j["residual_branch_kind"] = "mlp_relu";
  j["sigma_cap"] = s.sigma_cap;
  j["frob_cap"] = s.frob_cap;
  j["head_cap"] = s.head_cap;
  j["input_bound"] = s.input_bound;
  j["bn_eps"] = s.bn_eps;
  j["loss"] = std::string(to_string(s.loss));
  j["target_bound"] = s.target_bound;
  return j;
}

NetworkSpec spec_from_json(const Json& j) {
  io::require_known_keys(j,
                         {"depth", "width", "branch_width", "output_dim", "norm_kind", "eps_eng", "gamma",
                          "insertion_layer", "residual_branch_kind", "sigma_cap", "frob_cap", "head_cap",
                          "input_bound", "bn_eps", "loss", "target_bound"},
                         "network");
  NetworkSpec s;
  s.depth = io::get_or(j, "depth", s.depth);
  s.width = io::get_or(j, "width", s.width);
  s.branch_width = io::get_or(j, "branch_width", s.branch_width);
  s.output_dim = io::get_or(j, "output_dim", s.output_dim);
  s.norm_kind = parse_norm_kind(io::get_or<std::string>(j, "norm_kind", std::string(to_string(s.norm_kind))));
  s.eps_eng = io::get_or(j, "eps_eng", s.eps_eng);
  s.gamma = io::get_or(j, "gamma", s.gamma);
  s.insertion_layer = io::get_or(j, "insertion_layer", s.depth);
  if (io::get_or<std::string>(j, "residual_branch_kind", "mlp_relu") != "mlp_relu") {
    throw Error(ErrorCode::ConfigError, "network: only residual_branch_kind 'mlp_relu' is supported");
  }
  s.sigma_cap = io::get_or(j, "sigma_cap", s.sigma_cap);
  s.frob_cap = io::get_or(j, "frob_cap", s.frob_cap);
  s.head_cap = io::get_or(j, "head_cap", s.head_cap);
  s.input_bound = io::get_or(j, "input_bound", s.input_bound);
  s.bn_eps = io::get_or(j, "bn_eps", s.bn_eps);
  s.loss = parse_loss_kind(io::get_or<std::string>(j, "loss", std::string(to_string(s.loss))));
  s.target_bound = io::get_or(j, "target_bound", s.target_bound);
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return s;
}

Json state_to_json(const NetworkState& state) {
  Json layers = Json::array();
  for (const auto& l : state.layers) layers.push_back({{"w1", tensor_to_json(l.w1)}, {"w2", tensor_to_json(l.w2)}});
  Json stats = Json::array();
  for (const auto& st : state.norm_stats) {
    stats.push_back({{"mean", tensor_to_json(st.mean)}, {"var", tensor_to_json(st.var)},
                     {"beta", tensor_to_json(st.beta)}});
  }
  return {{"layers", layers}, {"head", tensor_to_json(state.head)}, {"norm_stats", stats}};
}

NetworkState state_from_json(const Json& j) {
  io::require_known_keys(j, {"layers", "head", "norm_stats"}, "state");
  NetworkState s;
  for (const auto& l : io::get_required<Json>(j, "layers", "state")) {
    io::require_known_keys(l, {"w1", "w2"}, "state.layers[]");
    s.layers.push_back({tensor_from_json(l.at("w1")), tensor_from_json(l.at("w2"))});
  }
  s.head = tensor_from_json(io::get_required<Json>(j, "head", "state"));
  for (const auto& st : io::get_or(j, "norm_stats", Json::array())) {
    io::require_known_keys(st, {"mean", "var", "beta"}, "state.norm_stats[]");
    s.norm_stats.push_back(
        {tensor_from_json(st.at("mean")), tensor_from_json(st.at("var")), tensor_from_json(st.at("beta"))});
  }
  return s;
}

Json block_to_json(const InsertedBlock& b) {
  Json j{{"feature", std::string(to_string(b.feature))},
         {"v", tensor_to_json(b.v)},
         {"v_sigma_cap", b.v_sigma_cap},
         {"v_frob_cap", b.v_frob_cap}};
  if (b.feature == FeatureKind::ReluRandom) j["u"] = tensor_to_json(b.u);
  return j;
}

InsertedBlock block_from_json(const Json& j) {
  io::require_known_keys(j, {"feature", "u", "v", "v_sigma_cap", "v_frob_cap"}, "block");
  InsertedBlock b;
  b.feature = parse_feature_kind(io::get_required<std::string>(j, "feature", "block"));
  if (b.feature == FeatureKind::ReluRandom) b.u = tensor_from_json(io::get_required<Json>(j, "u", "block"));
  b.v = tensor_from_json(io::get_required<Json>(j, "v", "block"));
  b.v_sigma_cap = io::get_required<double>(j, "v_sigma_cap", "block");
  b.v_frob_cap = io::get_required<double>(j, "v_frob_cap", "block");
  return b;
}

std::string model_to_text(const ModelFile& model) {
  Json j{{"format", "resexp.model"},
         {"version", kModelFormatVersion},
         {"spec", spec_to_json(model.spec)},
         {"state", state_to_json(model.state)}};
  j["block"] = model.block ? block_to_json(*model.block) : Json(nullptr);
  return io::dump_json(j);
}

ModelFile model_from_text(const std::string& text, const std::string& source) {
  const Json j = io::parse_json(text, source);
  io::require_known_keys(j, {"format", "version", "spec", "state", "block"}, "model");
  if (io::get_or<std::string>(j, "format", "") != "resexp.model") {
    throw Error(ErrorCode::ConfigError, source + ": not a resexp model file");
  }
  const int version = io::get_required<int>(j, "version", "model");
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::ConfigError, source + ": unsupported model version " + std::to_string(version));
  }
  ModelFile m;
  m.spec = spec_from_json(j.at("spec"));
  m.state = state_from_json(io::get_required<Json>(j, "state", "model"));
  if (j.contains("block") && !j.at("block").is_null()) m.block = block_from_json(j.at("block"));
  if (m.state.layers.size() != m.spec.depth) throw Error(ErrorCode::ConfigError, source + ": layer count != depth");
  return m;
}

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  io::write_text_file(path, model_to_text(model));
}

ModelFile load_model(const std::filesystem::path& path) {
  return model_from_text(io::read_text_file(path), path.string());
}

}  // namespace resexp::net
