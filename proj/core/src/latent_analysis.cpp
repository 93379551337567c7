#include "neurovol/latent_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"

namespace neurovol {

std::vector<double> fisher_score_per_dim(const Tensor<double>& latents,
                                         std::span<const std::size_t> labels) {
  if (latents.rank() != 2) throw ValidationError("fisher_score_per_dim expects [N, dim] latents");
  const std::size_t n = latents.extent(0), d = latents.extent(1);
  if (labels.size() != n) throw ValidationError("fisher_score_per_dim: label count mismatch");
  const std::size_t c = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> sizes(c, 0);
  for (auto l : labels) ++sizes[l];
  if (std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; }) < 2) {
    throw ValidationError("fisher_score_per_dim needs at least two classes");
  }

  std::vector<double> scores(d);
  std::vector<double> sum(c), sq(c);
  for (std::size_t j = 0; j < d; ++j) {
    std::fill(sum.begin(), sum.end(), 0.0);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum[labels[i]] += latents[i * d + j];
      total += latents[i * d + j];
    }
    const double grand = total / static_cast<double>(n);
    std::fill(sq.begin(), sq.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double m = sum[labels[i]] / static_cast<double>(sizes[labels[i]]);
      const double r = latents[i * d + j] - m;
      sq[labels[i]] += r * r;
    }
    double between = 0, within = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if (sizes[k] == 0) continue;
      const double m = sum[k] / static_cast<double>(sizes[k]);
      between += static_cast<double>(sizes[k]) * (m - grand) * (m - grand);
      within += sq[k];
    }
    between /= static_cast<double>(n);
    within /= static_cast<double>(n);
    if (within > 0) scores[j] = between / within;
    else scores[j] = between > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return scores;
}

std::vector<std::size_t> top_dimensions(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

template <typename T>
std::vector<Volume> latent_traversal(Vae<T>& model, std::size_t dim, std::span<const double> values) {
  const std::size_t l = model.config().latent_dim;
  if (dim >= l) {
    throw ValidationError("traversal dimension " + std::to_string(dim) + " out of range for latent size " +
                          std::to_string(l));
  }
  if (values.empty()) return {};
  Tensor<T> z(Shape{values.size(), l});
  for (std::size_t i = 0; i < values.size(); ++i) z[i * l + dim] = static_cast<T>(values[i]);
  return decode(model, z);
}

template std::vector<Volume> latent_traversal(Vae<float>&, std::size_t, std::span<const double>);
template std::vector<Volume> latent_traversal(Vae<double>&, std::size_t, std::span<const double>);

const AttributeReport* BiasReport::find(std::string_view attribute) const {
  for (const auto& a : attributes) {
    if (a.attribute == attribute) return &a;
  }
  return nullptr;
}

BiasReport metadata_bias_report(const DatasetManifest& manifest, const BiasOptions& options) {
  if (options.histogram_bins == 0) throw ValidationError("histogram_bins must be positive");
  BiasReport report;
  report.options = options;
  using Getter = double (*)(const AcquisitionMetadata&);
  const std::pair<const char*, Getter> attributes[] = {
      {"tr_ms", [](const AcquisitionMetadata& m) { return m.tr_ms; }},
      {"te_ms", [](const AcquisitionMetadata& m) { return m.te_ms; }},
      {"pixel_bandwidth_hz", [](const AcquisitionMetadata& m) { return m.pixel_bandwidth_hz; }},
      {"age_years", [](const AcquisitionMetadata& m) { return m.age_years; }},
  };

  for (const auto& [name, get] : attributes) {
    std::array<std::vector<double>, kNumClasses> values;
    std::size_t skipped = 0;
    for (const auto& r : manifest.records) {
      const double v = get(r.metadata);
      if (!std::isfinite(v)) {
        ++skipped;
        continue;
      }
      values[class_index(r.class_label)].push_back(v);
    }
    if (skipped > 0) {
      report.warnings.push_back(std::string(name) + ": skipped " + std::to_string(skipped) +
                                " record(s) without a finite value");
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& list : values) {
      for (double v : list) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!std::isfinite(lo)) {
      report.warnings.push_back(std::string(name) + ": no values; attribute skipped");
      continue;
    }

    AttributeReport attr;
    attr.attribute = name;
    attr.histogram_min = lo;
    attr.histogram_max = hi;
    const double width = (hi - lo) / static_cast<double>(options.histogram_bins);
    for (auto label : kAllClasses) {
      const auto& list = values[class_index(label)];
      if (list.empty()) continue;
      ClassAttributeSummary s;
      s.class_label = std::string(to_string(label));
      s.count = list.size();
      s.mean = std::accumulate(list.begin(), list.end(), 0.0) / static_cast<double>(list.size());
      double ss = 0;
      for (double v : list) ss += (v - s.mean) * (v - s.mean);
      s.sd = list.size() > 1 ? std::sqrt(ss / static_cast<double>(list.size() - 1)) : 0.0;
      s.histogram.assign(options.histogram_bins, 0);
      for (double v : list) {
        std::size_t bin = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
        ++s.histogram[std::min(bin, options.histogram_bins - 1)];
      }
      attr.classes.push_back(std::move(s));
    }
    for (std::size_t a = 0; a < attr.classes.size(); ++a) {
      for (std::size_t b = a + 1; b < attr.classes.size(); ++b) {
        const auto& x = attr.classes[a];
        const auto& y = attr.classes[b];
        const double dof = static_cast<double>(x.count + y.count) - 2.0;
        const double pooled =
            dof > 0 ? std::sqrt(((static_cast<double>(x.count) - 1) * x.sd * x.sd +
                                 (static_cast<double>(y.count) - 1) * y.sd * y.sd) / dof)
                    : 0.0;
        const double gap = std::abs(x.mean - y.mean);
        if (gap > options.flag_multiple * pooled && gap > 0) {
          attr.flags.push_back({x.class_label, y.class_label, gap, pooled});
        }
      }
    }
    report.attributes.push_back(std::move(attr));
  }
  return report;
}

void to_json(nlohmann::json& j, const BiasReport& r) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : r.attributes) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : a.classes) {
      classes.push_back({{"class_label", c.class_label},
                         {"count", c.count},
                         {"mean", c.mean},
                         {"sd", c.sd},
                         {"histogram", c.histogram}});
    }
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& f : a.flags) {
      flags.push_back({{"class_a", f.class_a}, {"class_b", f.class_b}, {"gap", f.gap}, {"pooled_sd", f.pooled_sd}});
    }
    attrs.push_back({{"attribute", a.attribute},
                     {"histogram_range", {a.histogram_min, a.histogram_max}},
                     {"classes", classes},
                     {"flags", flags}});
  }
  j = {{"flag_multiple", r.options.flag_multiple},
       {"histogram_bins", r.options.histogram_bins},
       {"attributes", attrs},
       {"warnings", r.warnings}};
}

}  // namespace neurovol
