#include "mosaic/oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace mosaic::oracles {

double mean_coordinate(const std::vector<double>& values, const std::vector<double>& weights, double fallback) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total = total + weights[i];
  if (!(total > 0.0)) return fallback;
  std::size_t first = 0;
  while (weights[first] <= 0.0) first = first + 1;
  const double ref = values[first];
  double acc = 0.0;
  double lo = ref;
  double hi = ref;
  for (std::size_t i = first; i < values.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc = acc + (weights[i] / total) * (values[i] - ref);
    if (values[i] < lo) lo = values[i];
    if (values[i] > hi) hi = values[i];
  }
  double out = ref + acc;
  if (out < lo) out = lo;
  if (out > hi) out = hi;
  return out;
}

namespace {

// Which global units feed and leave layer i for a given set of kept units.
struct LayerUnits {
  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
};

std::vector<std::size_t> all_units(std::size_t n) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(i);
  return v;
}

std::vector<LayerUnits> layer_units(const nn::ModelSpec& spec, const std::vector<std::vector<std::size_t>>& units) {
  // Hidden dense layers are all Dense layers, minus the last one when there is
  // no output head.
  std::vector<std::size_t> dense;
  bool has_head = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<nn::Dense>(spec.layers[i])) dense.push_back(i);
    if (std::holds_alternative<nn::OutputHead>(spec.layers[i])) has_head = true;
  }
  if (!has_head && !dense.empty()) dense.pop_back();
  std::vector<LayerUnits> out(spec.layers.size());
  std::vector<std::size_t> current = all_units(spec.input_dim());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    out[i].in = current;
    const auto& layer = spec.layers[i];
    if (const auto* d = std::get_if<nn::Dense>(&layer)) {
      std::size_t h = 0;
      while (h < dense.size() && dense[h] != i) ++h;
      const bool hidden = h < dense.size();
      current = hidden && !units.empty() ? units[h] : all_units(d->out);
    } else if (const auto* head = std::get_if<nn::OutputHead>(&layer)) {
      current = all_units(head->classes);
    }
    out[i].out = current;
  }
  return out;
}

long position(const std::vector<std::size_t>& v, std::size_t x) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == x) return static_cast<long>(i);
  }
  return -1;
}

std::size_t layer_of(const std::string& name) { return static_cast<std::size_t>(std::stoul(name.substr(0, name.find('.')))); }

}  // namespace

std::optional<std::pair<long, long>> sub_position(const nn::ModelSpec& spec,
                                                  const std::vector<std::vector<std::size_t>>& units,
                                                  const std::string& name, nn::Role role, long r, long c) {
  const LayerUnits lu = layer_units(spec, units)[layer_of(name)];
  // Weights are (in × out); every other entry is a row over the layer's
  // output (dense bias) or its width (batch norm).
  const bool matrix = role == nn::Role::weight;
  const bool bn = role != nn::Role::weight && role != nn::Role::bias;
  const long pc = position(bn ? lu.in : lu.out, static_cast<std::size_t>(c));
  const long pr = matrix ? position(lu.in, static_cast<std::size_t>(r)) : (r == 0 ? 0 : -1);
  if (pc < 0 || pr < 0) return std::nullopt;
  return std::make_pair(pr, pc);
}

nn::ParamSet brute_partial(const nn::ParamSet& previous, const nn::ModelSpec& spec, std::vector<Upload> uploads) {
  std::sort(uploads.begin(), uploads.end(), [](const Upload& a, const Upload& b) { return a.id < b.id; });
  nn::ParamSet out = previous;
  for (auto& entry : out.mutable_entries()) {
    for (long r = 0; r < entry.value.rows(); ++r) {
      for (long c = 0; c < entry.value.cols(); ++c) {
        std::vector<double> vals;
        std::vector<double> ws;
        for (const auto& u : uploads) {
          const auto pos = sub_position(spec, u.units, entry.name, entry.role, r, c);
          if (!pos) continue;
          vals.push_back(u.params.at(entry.name)(pos->first, pos->second));
          ws.push_back(u.weight);
        }
        if (!vals.empty()) entry.value(r, c) = mean_coordinate(vals, ws, entry.value(r, c));
      }
    }
  }
  return out;
}

nn::ParamSet brute_fedavg(std::vector<Upload> uploads) {
  std::sort(uploads.begin(), uploads.end(), [](const Upload& a, const Upload& b) { return a.id < b.id; });
  nn::ParamSet out = uploads.front().params;
  for (auto& entry : out.mutable_entries()) {
    for (long r = 0; r < entry.value.rows(); ++r) {
      for (long c = 0; c < entry.value.cols(); ++c) {
        std::vector<double> vals;
        std::vector<double> ws;
        for (const auto& u : uploads) {
          vals.push_back(u.params.at(entry.name)(r, c));
          ws.push_back(u.weight);
        }
        entry.value(r, c) = mean_coordinate(vals, ws, entry.value(r, c));
      }
    }
  }
  return out;
}

std::vector<nn::ParamSet> brute_classwise(const std::vector<std::size_t>& ids,
                                          const std::vector<nn::ParamSet>& full_models,
                                          const std::vector<std::vector<std::size_t>>& histograms,
                                          const nn::ParamSet& global) {
  const std::size_t classes = histograms.front().size();
  std::vector<nn::ParamSet> out;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<Upload> ups;
    std::size_t total = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ups.push_back({ids[i], static_cast<double>(histograms[i][c]), full_models[i], {}});
      total += histograms[i][c];
    }
    out.push_back(total == 0 ? global : brute_fedavg(ups));
  }
  return out;
}

Matrix straight_forward(const nn::ParamSet& params, const nn::ModelSpec& spec, const Matrix& x_in, bool train_mode) {
  std::vector<std::vector<double>> x(static_cast<std::size_t>(x_in.rows()));
  for (long r = 0; r < x_in.rows(); ++r) {
    for (long c = 0; c < x_in.cols(); ++c) x[static_cast<std::size_t>(r)].push_back(x_in(r, c));
  }
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string p = nn::ModelSpec::prefix(i);
    const auto& layer = spec.layers[i];
    if (std::holds_alternative<nn::Dense>(layer) || std::holds_alternative<nn::OutputHead>(layer)) {
      const Matrix& w = params.at(p + "weight");
      const Matrix& b = params.at(p + "bias");
      for (auto& row : x) {
        std::vector<double> y(static_cast<std::size_t>(w.cols()));
        for (long o = 0; o < w.cols(); ++o) {
          double s = 0.0;
          for (long k = 0; k < w.rows(); ++k) s += row[static_cast<std::size_t>(k)] * w(k, o);
          y[static_cast<std::size_t>(o)] = s + b(0, o);
        }
        row = std::move(y);
      }
    } else if (const auto* bn = std::get_if<nn::BatchNorm>(&layer)) {
      for (std::size_t j = 0; j < bn->dim; ++j) {
        double mean = 0.0;
        double var = 0.0;
        if (train_mode) {
          for (const auto& row : x) mean += row[j];
          mean /= static_cast<double>(n);
          for (const auto& row : x) var += (row[j] - mean) * (row[j] - mean);
          var /= static_cast<double>(n);
        } else {
          mean = params.at(p + "running_mean")(0, static_cast<long>(j));
          var = params.at(p + "running_var")(0, static_cast<long>(j));
        }
        const double g = params.at(p + "gain")(0, static_cast<long>(j));
        const double s = params.at(p + "shift")(0, static_cast<long>(j));
        for (auto& row : x) row[j] = g * (row[j] - mean) / std::sqrt(var + 1e-5) + s;
      }
    } else if (std::holds_alternative<nn::Relu>(layer)) {
      for (auto& row : x) {
        for (double& v : row) v = v > 0.0 ? v : 0.0;
      }
    } else if (const auto* sq = std::get_if<nn::Squash>(&layer)) {
      for (auto& row : x) {
        for (double& v : row) v = sq->lo + (sq->hi - sq->lo) * 0.5 * (std::tanh(v) + 1.0);
      }
    }
  }
  Matrix out(static_cast<long>(n), n == 0 ? 0 : static_cast<long>(x[0].size()));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < x[r].size(); ++c) out(static_cast<long>(r), static_cast<long>(c)) = x[r][c];
  }
  return out;
}

Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (long r = 0; r < x.rows(); ++r) {
    for (long c = 0; c < x.cols(); ++c) {
      const double orig = probe(r, c);
      probe(r, c) = orig + step;
      const double up = f(probe);
      probe(r, c) = orig - step;
      const double down = f(probe);
      probe(r, c) = orig;
      g(r, c) = (up - down) / (2.0 * step);
    }
  }
  return g;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("shape mismatch");
  double worst = 0.0;
  for (long r = 0; r < a.rows(); ++r) {
    for (long c = 0; c < a.cols(); ++c) {
      const double den = std::max({std::abs(a(r, c)), std::abs(b(r, c)), floor});
      worst = std::max(worst, std::abs(a(r, c) - b(r, c)) / den);
    }
  }
  return worst;
}

std::vector<double> softmax_row(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p;
  double s = 0.0;
  for (double v : logits) {
    p.push_back(std::exp(v - m));
    s += p.back();
  }
  for (double& v : p) v /= s;
  return p;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

namespace {

std::vector<double> row_of(const Matrix& m, long r) {
  std::vector<double> v;
  for (long c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

}  // namespace

double mean_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  double s = 0.0;
  for (long r = 0; r < logits.rows(); ++r) {
    const auto p = softmax_row(row_of(logits, r));
    s -= std::log(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])]);
  }
  return s / static_cast<double>(logits.rows());
}

double mean_kl(const Matrix& teacher_logits, const Matrix& student_logits) {
  double s = 0.0;
  for (long r = 0; r < teacher_logits.rows(); ++r) {
    const auto p = softmax_row(row_of(teacher_logits, r));
    const auto q = softmax_row(row_of(student_logits, r));
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (p[c] > 0.0) s += p[c] * (std::log(p[c]) - std::log(q[c]));
    }
  }
  return s / static_cast<double>(teacher_logits.rows());
}

std::optional<double> brute_silhouette(const Matrix& features, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  std::map<int, std::size_t> count;
  for (int l : labels) ++count[l];
  if (count.size() < 2) return std::nullopt;
  const auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (long c = 0; c < features.cols(); ++c) {
      const double d = features(static_cast<long>(i), c) - features(static_cast<long>(j), c);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (count[labels[i]] == 1) continue;
    double a = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) a += dist(i, j);
    }
    a /= static_cast<double>(count[labels[i]] - 1);
    double b = INFINITY;
    for (const auto& [label, size] : count) {
      if (label == labels[i]) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[j] == label) d += dist(i, j);
      }
      b = std::min(b, d / static_cast<double>(size));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace mosaic::oracles
