#include "vsps/cnf.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include <spdlog/spdlog.h>

#include "json.hpp"

namespace vsps::cnf {

namespace {

constexpr std::array<char, 8> kMagic{'V', 'S', 'P', 'S', 'F', 'L', 'O', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

Matrix concat_columns(const Matrix& y, const Matrix& x) {
  if (x.rows() != y.rows()) throw nn::ShapeError("flow: y and x row counts differ");
  Matrix input(y.rows(), y.cols() + x.cols());
  input.leftCols(y.cols()) = y;
  if (x.cols() > 0) input.rightCols(x.cols()) = x;
  return input;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw EvaluationError(std::string("non-finite intermediate in ") + what);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), 8);
}

std::uint64_t read_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw std::runtime_error("flow file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<int> block_ranks(int d, int index) {
  std::vector<int> ranks(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) ranks[i] = (index % 2 == 0) ? i + 1 : d - i;
  return ranks;
}

MadeMasks masks_from_degrees(int d, int p, const std::vector<int>& ranks,
                             const std::vector<std::vector<int>>& hidden_degrees) {
  if (d < 1) throw std::invalid_argument("MADE masks need d >= 1");
  if (static_cast<int>(ranks.size()) != d) throw std::invalid_argument("ranks must have length d");
  if (hidden_degrees.empty()) throw std::invalid_argument("MADE needs at least one hidden layer");
  MadeMasks masks;
  masks.hidden_degrees = hidden_degrees;

  const auto& first = hidden_degrees.front();
  Matrix input_mask = Matrix::Ones(static_cast<Eigen::Index>(first.size()), d + p);
  for (std::size_t k = 0; k < first.size(); ++k) {
    for (int j = 0; j < d; ++j) {
      input_mask(static_cast<Eigen::Index>(k), j) = first[k] >= ranks[j] ? 1.0 : 0.0;
    }
  }
  masks.layers.push_back(std::move(input_mask));

  for (std::size_t l = 1; l < hidden_degrees.size(); ++l) {
    const auto& prev = hidden_degrees[l - 1];
    const auto& cur = hidden_degrees[l];
    Matrix mask(static_cast<Eigen::Index>(cur.size()), static_cast<Eigen::Index>(prev.size()));
    for (std::size_t k = 0; k < cur.size(); ++k) {
      for (std::size_t j = 0; j < prev.size(); ++j) {
        mask(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = cur[k] >= prev[j] ? 1.0 : 0.0;
      }
    }
    masks.layers.push_back(std::move(mask));
  }

  const auto& last = hidden_degrees.back();
  Matrix output_mask(2 * d, static_cast<Eigen::Index>(last.size()));
  for (int i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < last.size(); ++k) {
      const double m = ranks[i] > last[k] ? 1.0 : 0.0;
      output_mask(i, static_cast<Eigen::Index>(k)) = m;
      output_mask(d + i, static_cast<Eigen::Index>(k)) = m;
    }
  }
  masks.layers.push_back(std::move(output_mask));
  return masks;
}

MadeMasks build_made_masks(int d, int p, const std::vector<int>& hidden_sizes,
                           const std::vector<int>& ranks, Rng& rng) {
  if (d < 1) throw std::invalid_argument("MADE masks need d >= 1");
  if (hidden_sizes.empty()) throw std::invalid_argument("MADE needs at least one hidden layer");
  std::vector<std::vector<int>> degrees;
  for (int width : hidden_sizes) {
    if (width < 1) throw std::invalid_argument("hidden layer widths must be positive");
    std::vector<int> layer(static_cast<std::size_t>(width));
    for (auto& deg : layer) deg = static_cast<int>(rng.index(static_cast<std::size_t>(d)));
    degrees.push_back(std::move(layer));
  }
  return masks_from_degrees(d, p, ranks, degrees);
}

MadeBlock::MadeBlock(std::vector<int> ranks, std::vector<std::vector<int>> hidden_degrees, nn::Mlp net,
                     int feature_dim, double clamp)
    : ranks_(std::move(ranks)),
      hidden_degrees_(std::move(hidden_degrees)),
      net_(std::move(net)),
      feature_dim_(feature_dim),
      clamp_(clamp) {}

MadeBlock::Heads MadeBlock::heads(const Matrix& y, const Matrix& x, nn::Mlp::Cache* cache) const {
  const int d = response_dim();
  if (y.cols() != d || x.cols() != feature_dim_) throw nn::ShapeError("MadeBlock: input widths");
  const Matrix out = net_.forward(concat_columns(y, x), cache);
  Heads h;
  h.shift = out.leftCols(d);
  h.raw_log_scale = out.rightCols(d);
  const double c = clamp_;
  h.log_scale = h.raw_log_scale.unaryExpr([c](double v) { return std::clamp(v, -c, c); });
  return h;
}

Matrix MadeBlock::forward(const Matrix& y, const Matrix& x, Vector& log_det, Cache* cache) const {
  Heads h = heads(y, x, cache ? &cache->mlp : nullptr);
  Matrix z = (y - h.shift).cwiseProduct((-h.log_scale).array().exp().matrix());
  log_det = -h.log_scale.rowwise().sum();
  require_finite(z, "flow forward");
  if (cache) {
    cache->heads = std::move(h);
    cache->z = z;
  }
  return z;
}

Matrix MadeBlock::inverse(const Matrix& z, const Matrix& x, Vector& log_det) const {
  const int d = response_dim();
  if (z.cols() != d) throw nn::ShapeError("MadeBlock::inverse: z width");
  Matrix y = Matrix::Zero(z.rows(), d);
  Matrix used_log_scale(z.rows(), d);
  for (int r = 1; r <= d; ++r) {
    const auto it = std::find(ranks_.begin(), ranks_.end(), r);
    const auto i = static_cast<Eigen::Index>(it - ranks_.begin());
    const Heads h = heads(y, x);
    y.col(i) = z.col(i).cwiseProduct(h.log_scale.col(i).array().exp().matrix()) + h.shift.col(i);
    used_log_scale.col(i) = h.log_scale.col(i);
  }
  log_det = -used_log_scale.rowwise().sum();
  require_finite(y, "flow inverse");
  return y;
}

Matrix MadeBlock::backward(const Cache& cache, const Matrix& grad_z, const Vector& grad_log_det,
                           std::vector<nn::AffineGradients>& layer_grads) const {
  const int d = response_dim();
  const Matrix inv_scale = (-cache.heads.log_scale).array().exp().matrix();
  const Matrix grad_y_direct = grad_z.cwiseProduct(inv_scale);
  Matrix grad_heads(grad_z.rows(), 2 * d);
  grad_heads.leftCols(d) = -grad_y_direct;
  // dz/ds = -z, dlogdet/ds = -1; clamped entries pass no gradient.
  Matrix grad_s = -grad_z.cwiseProduct(cache.z);
  grad_s.colwise() -= grad_log_det;
  const double c = clamp_;
  grad_heads.rightCols(d) = grad_s.binaryExpr(
      cache.heads.raw_log_scale, [c](double g, double raw) { return std::abs(raw) <= c ? g : 0.0; });
  const Matrix grad_input = net_.backward(cache.mlp, grad_heads, layer_grads);
  return grad_y_direct + grad_input.leftCols(d);
}

FlowModel FlowModel::random(const FlowArchitecture& arch) {
  FlowModel model;
  model.arch_ = arch;
  if (arch.blocks < 1) throw std::invalid_argument("flow needs at least one block");
  const int d = arch.response_dim;
  const int p = arch.feature_dim;
  if (p < 0) throw std::invalid_argument("feature_dim must be non-negative");
  Rng mask_rng(derive_seed(arch.seed, Stream::kFlowInit, 0));
  Rng weight_rng(derive_seed(arch.seed, Stream::kFlowInit, 1));
  for (int b = 0; b < arch.blocks; ++b) {
    auto ranks = block_ranks(d, b);
    MadeMasks masks = build_made_masks(d, p, arch.hidden_sizes, ranks, mask_rng);
    nn::Mlp net = nn::Mlp::glorot(d + p, arch.hidden_sizes, 2 * d, weight_rng, masks.layers);
    model.blocks_.emplace_back(std::move(ranks), std::move(masks.hidden_degrees), std::move(net), p,
                               arch.log_scale_clamp);
  }
  return model;
}

FlowModel FlowModel::zeros(const FlowArchitecture& arch) {
  FlowModel model = random(arch);
  for (auto& group : model.parameters()) std::fill(group.values.begin(), group.values.end(), 0.0);
  return model;
}

FlowOutput FlowModel::forward(const Matrix& y, const Matrix& x) const {
  if (y.cols() != arch_.response_dim || x.cols() != arch_.feature_dim) {
    throw nn::ShapeError("flow forward: widths do not match the model");
  }
  FlowOutput out{y, Vector::Zero(y.rows())};
  Vector block_log_det;
  for (const auto& block : blocks_) {
    out.values = block.forward(out.values, x, block_log_det);
    out.log_det += block_log_det;
  }
  return out;
}

FlowOutput FlowModel::inverse(const Matrix& z, const Matrix& x) const {
  if (z.cols() != arch_.response_dim || x.cols() != arch_.feature_dim) {
    throw nn::ShapeError("flow inverse: widths do not match the model");
  }
  FlowOutput out{z, Vector::Zero(z.rows())};
  Vector block_log_det;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    out.values = it->inverse(out.values, x, block_log_det);
    out.log_det += block_log_det;
  }
  return out;
}

std::pair<Vector, double> FlowModel::forward(const Vector& y, const Vector& x) const {
  FlowOutput out = forward(Matrix(y.transpose()), Matrix(x.transpose()));
  return {out.values.row(0).transpose(), out.log_det(0)};
}

std::pair<Vector, double> FlowModel::inverse(const Vector& z, const Vector& x) const {
  FlowOutput out = inverse(Matrix(z.transpose()), Matrix(x.transpose()));
  return {out.values.row(0).transpose(), out.log_det(0)};
}

std::vector<nn::ParameterGroup> FlowModel::parameters() {
  std::vector<nn::ParameterGroup> groups;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& layers = blocks_[b].net().layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      nn::append_layer_parameters(layers[l], "block" + std::to_string(b) + ".layer" + std::to_string(l),
                                  groups);
    }
  }
  return groups;
}

void FlowModel::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["response_dim"] = arch_.response_dim;
  header["feature_dim"] = arch_.feature_dim;
  header["hidden_sizes"] = arch_.hidden_sizes;
  header["blocks"] = arch_.blocks;
  header["log_scale_clamp"] = arch_.log_scale_clamp;
  header["seed"] = arch_.seed;
  header["orderings"] = nlohmann::json::array();
  header["hidden_degrees"] = nlohmann::json::array();
  std::uint64_t count = 0;
  for (const auto& block : blocks_) {
    header["orderings"].push_back(block.ranks());
    header["hidden_degrees"].push_back(block.hidden_degrees());
    for (const auto& layer : block.net().layers()) {
      count += static_cast<std::uint64_t>(layer.weights.size() + layer.biases.size());
    }
  }
  header["parameter_count"] = count;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& block : blocks_) {
    for (const auto& layer : block.net().layers()) {
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
        write_u64(out, std::bit_cast<std::uint64_t>(layer.weights.data()[i]));
      }
      for (Eigen::Index i = 0; i < layer.biases.size(); ++i) {
        write_u64(out, std::bit_cast<std::uint64_t>(layer.biases.data()[i]));
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FlowModel FlowModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open flow file " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + " is not a flow model file");
  const std::uint64_t header_size = read_u64(in);
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw std::runtime_error("flow file truncated");
  const auto header = nlohmann::json::parse(text);
  if (header.at("format_version").get<std::uint32_t>() != kFormatVersion) {
    throw std::runtime_error("unsupported flow file version");
  }

  FlowModel model;
  auto& arch = model.arch_;
  arch.response_dim = header.at("response_dim");
  arch.feature_dim = header.at("feature_dim");
  arch.hidden_sizes = header.at("hidden_sizes").get<std::vector<int>>();
  arch.blocks = header.at("blocks");
  arch.log_scale_clamp = header.at("log_scale_clamp");
  arch.seed = header.at("seed");
  const int d = arch.response_dim;
  const int p = arch.feature_dim;
  for (int b = 0; b < arch.blocks; ++b) {
    auto ranks = header.at("orderings").at(b).get<std::vector<int>>();
    auto degrees = header.at("hidden_degrees").at(b).get<std::vector<std::vector<int>>>();
    MadeMasks masks = masks_from_degrees(d, p, ranks, degrees);
    std::vector<nn::AffineLayer> layers;
    for (auto& mask : masks.layers) {
      const int in = static_cast<int>(mask.cols());
      const int out = static_cast<int>(mask.rows());
      layers.push_back(nn::AffineLayer::zeros(in, out, std::move(mask)));
    }
    model.blocks_.emplace_back(std::move(ranks), std::move(degrees), nn::Mlp(std::move(layers)), p,
                               arch.log_scale_clamp);
  }
  auto groups = model.parameters();
  if (nn::parameter_count(groups) != header.at("parameter_count").get<std::uint64_t>()) {
    throw std::runtime_error("flow file parameter count does not match its architecture");
  }
  for (auto& group : groups) {
    for (double& v : group.values) v = std::bit_cast<double>(read_u64(in));
  }
  return model;
}

NllResult nll_loss(const Matrix& y, const Matrix& x, FlowModel& model, bool with_gradients) {
  if (y.rows() == 0) throw std::invalid_argument("nll_loss: empty batch");
  const auto& blocks = model.blocks();
  const double n = static_cast<double>(y.rows());
  const double d = static_cast<double>(model.response_dim());
  const double log_norm = 0.5 * d * std::log(2.0 * std::numbers::pi);

  std::vector<MadeBlock::Cache> caches(with_gradients ? blocks.size() : 0);
  Matrix values = y;
  Vector log_det = Vector::Zero(y.rows());
  Vector block_log_det;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    values = blocks[b].forward(values, x, block_log_det, with_gradients ? &caches[b] : nullptr);
    log_det += block_log_det;
  }
  NllResult result;
  result.loss = (0.5 * values.rowwise().squaredNorm().sum() - log_det.sum()) / n + log_norm;
  if (!std::isfinite(result.loss)) throw nn::TrainingError("non-finite negative log-likelihood");
  if (!with_gradients) return result;

  Matrix grad = values / n;
  const Vector grad_log_det = Vector::Constant(y.rows(), -1.0 / n);
  std::vector<std::vector<nn::AffineGradients>> layer_grads(blocks.size());
  for (std::size_t b = blocks.size(); b-- > 0;) {
    grad = blocks[b].backward(caches[b], grad, grad_log_det, layer_grads[b]);
  }
  for (const auto& per_block : layer_grads) {
    for (const auto& g : per_block) nn::append_layer_gradients(g, result.grads);
  }
  return result;
}

Vector pointwise_nll(const Matrix& y, const Matrix& x, const FlowModel& model) {
  const FlowOutput out = model.forward(y, x);
  const double log_norm = 0.5 * model.response_dim() * std::log(2.0 * std::numbers::pi);
  return (0.5 * out.values.rowwise().squaredNorm() - out.log_det).array() + log_norm;
}

double FlowObjective::loss(const nn::Batch& batch, nn::GradientSet* grads) {
  NllResult r = nll_loss(batch.targets, batch.features, model_, grads != nullptr);
  if (grads) *grads = std::move(r.grads);
  return r.loss;
}

FlowModel fit_flow(const nn::Batch& train, const nn::Batch& val, const FlowArchitecture& arch,
                   const nn::TrainConfig& config, nn::TrainResult* result) {
  FlowModel model = FlowModel::random(arch);
  FlowObjective objective(model);
  spdlog::info("flow training: {} train / {} val rows, {} blocks", train.rows(), val.rows(), arch.blocks);
  nn::TrainResult r = nn::train(objective, train, val, config, "flow training");
  spdlog::info("flow training: stopped after {} epochs, best epoch {} val nll {:.4f}", r.history.size(),
               r.best_epoch, r.best_val_loss);
  if (result) *result = std::move(r);
  return model;
}

}  // namespace vsps::cnf
