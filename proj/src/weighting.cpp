#include "diagen/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

namespace diagen {

namespace {

void softmax_into(const std::vector<double>& z, std::vector<double>& p) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    p.resize(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
        p[c] = std::exp(z[c] - zmax);
        sum += p[c];
    }
    for (double& v : p) v /= sum;
}

struct ProbeProblem {
    const FeatureTable& features;
    std::vector<int> labels;  // class indices
    std::size_t n_classes;
    double l2;

    // Mean cross-entropy plus the ridge term; optionally fills the gradient.
    double objective(const std::vector<double>& theta, std::vector<double>* grad) const {
        const std::size_t dim = features.dim();
        const std::size_t n = features.size();
        const double* w = theta.data();                       // C x D
        const double* b = theta.data() + n_classes * dim;     // C
        if (grad) grad->assign(theta.size(), 0.0);

        double loss = 0.0;
        std::vector<double> z(n_classes), p;
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = features.row(i);
            for (std::size_t c = 0; c < n_classes; ++c) {
                double acc = b[c];
                for (std::size_t d = 0; d < dim; ++d) acc += w[c * dim + d] * x[d];
                z[c] = acc;
            }
            softmax_into(z, p);
            loss -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300));
            if (grad) {
                for (std::size_t c = 0; c < n_classes; ++c) {
                    const double delta =
                        (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
                    for (std::size_t d = 0; d < dim; ++d) (*grad)[c * dim + d] += delta * x[d];
                    (*grad)[n_classes * dim + c] += delta;
                }
            }
        }
        loss /= static_cast<double>(n);

        double ridge = 0.0;
        for (std::size_t j = 0; j < n_classes * dim; ++j) {
            ridge += w[j] * w[j];
            if (grad) (*grad)[j] += l2 * w[j];
        }
        return loss + 0.5 * l2 * ridge;
    }
};

}  // namespace

LinearProbe train_probe(const FeatureTable& features, const std::vector<std::string>& class_order,
                        const ProbeHyperparams& hp) {
    if (features.size() == 0) throw InputError("probe: empty feature table");
    if (class_order.empty()) throw InputError("probe: empty class order");
    for (double v : features.matrix())
        if (!std::isfinite(v)) throw InputError("probe: non-finite feature value");

    std::unordered_map<std::string, int> class_index;
    for (std::size_t c = 0; c < class_order.size(); ++c)
        class_index.emplace(class_order[c], static_cast<int>(c));
    std::vector<int> counts(class_order.size(), 0);
    std::vector<int> labels(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto it = class_index.find(features.labels()[i]);
        if (it == class_index.end())
            throw InputError("probe: label '" + features.labels()[i] + "' not in class order");
        labels[i] = it->second;
        ++counts[static_cast<std::size_t>(it->second)];
    }
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0)
            throw InputError("probe: class '" + class_order[c] + "' has no examples");

    const std::size_t dim = features.dim();
    const std::size_t n_classes = class_order.size();
    const ProbeProblem problem{features, std::move(labels), n_classes, hp.l2};

    std::vector<double> theta(n_classes * dim + n_classes, 0.0);
    std::vector<double> grad, trial;
    double f = problem.objective(theta, &grad);
    double step = 1.0;
    for (int iter = 0; iter < hp.max_iters; ++iter) {
        double gnorm_sq = 0.0;
        for (double g : grad) gnorm_sq += g * g;
        if (std::sqrt(gnorm_sq) <= hp.tolerance) break;

        // Armijo backtracking; the accepted step seeds the next iteration.
        constexpr double kArmijo = 1e-4;
        step = std::min(step * 2.0, 1e6);
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            trial.resize(theta.size());
            for (std::size_t j = 0; j < theta.size(); ++j) trial[j] = theta[j] - step * grad[j];
            const double f_trial = problem.objective(trial, nullptr);
            if (f_trial <= f - kArmijo * step * gnorm_sq) {
                theta.swap(trial);
                f = problem.objective(theta, &grad);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no descent direction left at double precision
    }

    LinearProbe probe;
    probe.class_order = class_order;
    probe.dim = dim;
    probe.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_classes * dim));
    probe.bias.assign(theta.begin() + static_cast<std::ptrdiff_t>(n_classes * dim), theta.end());
    return probe;
}

std::vector<double> logits(const LinearProbe& probe, std::span<const double> feature) {
    if (feature.size() != probe.dim)
        throw InputError("logits: feature dimension " + std::to_string(feature.size()) +
                         ", probe expects " + std::to_string(probe.dim));
    const std::size_t n_classes = probe.class_order.size();
    std::vector<double> z(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        double acc = probe.bias[c];
        for (std::size_t d = 0; d < probe.dim; ++d) acc += probe.weights[c * probe.dim + d] * feature[d];
        z[c] = acc;
    }
    return z;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const FeatureTable& features, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw InputError("split: fraction must be in (0,1)");
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < features.size(); ++i) by_class[features.labels()[i]].push_back(i);

    std::vector<std::size_t> train, val;
    for (auto& [label, rows] : by_class) {
        if (rows.size() == 1) {
            train.push_back(rows[0]);
            val.push_back(rows[0]);
            continue;
        }
        Rng rng(derive_seed(seed, label, 0, "val-split"));
        for (std::size_t i = rows.size() - 1; i > 0; --i)
            std::swap(rows[i], rows[rng.uniform_below(i + 1)]);
        const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
        const std::size_t n_val = std::clamp<std::size_t>(want, 1, rows.size() - 1);
        val.insert(val.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

double nll_at_temperature(const std::vector<std::vector<double>>& val_logits,
                          const std::vector<int>& val_labels, double temperature) {
    if (!(temperature > 0.0)) throw InputError("nll: temperature must be positive");
    double nll = 0.0;
    std::vector<double> scaled, p;
    for (std::size_t i = 0; i < val_logits.size(); ++i) {
        const auto& z = val_logits[i];
        scaled.resize(z.size());
        for (std::size_t c = 0; c < z.size(); ++c) scaled[c] = z[c] / temperature;
        softmax_into(scaled, p);
        nll -= std::log(std::max(p[static_cast<std::size_t>(val_labels[i])], 1e-300));
    }
    return nll;
}

Temperature calibrate_temperature(const std::vector<std::vector<double>>& val_logits,
                                  const std::vector<int>& val_labels) {
    if (val_logits.empty()) throw InputError("calibrate: empty validation set");
    if (val_logits.size() != val_labels.size())
        throw InputError("calibrate: logits and labels differ in length");
    const std::size_t n_classes = val_logits.front().size();
    if (n_classes < 2) throw InputError("calibrate: need at least two classes");
    for (std::size_t i = 0; i < val_logits.size(); ++i) {
        if (val_logits[i].size() != n_classes) throw InputError("calibrate: ragged logit rows");
        for (double z : val_logits[i])
            if (!std::isfinite(z)) throw InputError("calibrate: non-finite logit");
        if (val_labels[i] < 0 || static_cast<std::size_t>(val_labels[i]) >= n_classes)
            throw InputError("calibrate: label out of range");
    }

    const double lo = std::log(0.05), hi = std::log(20.0);
    const auto nll_log = [&](double log_t) {
        return nll_at_temperature(val_logits, val_labels, std::exp(log_t));
    };

    // Coarse scan to bracket the minimum. log(1) = 0 is always a candidate,
    // which pins NLL(T*) <= NLL(1) regardless of where the search lands.
    std::vector<double> candidates;
    constexpr int kGrid = 33;
    for (int i = 0; i < kGrid; ++i)
        candidates.push_back(lo + (hi - lo) * static_cast<double>(i) / (kGrid - 1));
    candidates.push_back(0.0);
    std::sort(candidates.begin(), candidates.end());
    std::size_t best = 0;
    double best_val = nll_log(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double v = nll_log(candidates[i]);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    double a = candidates[best == 0 ? 0 : best - 1];
    double b = candidates[std::min(best + 1, candidates.size() - 1)];

    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = b - kInvPhi * (b - a);
    double x2 = a + kInvPhi * (b - a);
    double f1 = nll_log(x1), f2 = nll_log(x2);
    while (b - a > 1e-4) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = nll_log(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = nll_log(x2);
        }
    }
    const double log_t = 0.5 * (a + b);
    // Keep whichever of the refined point and the best coarse candidate wins.
    double t = std::exp(log_t);
    if (nll_log(log_t) > best_val) t = std::exp(candidates[best]);
    return Temperature{t};
}

double confidence(const std::vector<double>& z, Temperature t, std::size_t class_index) {
    if (!(t.value > 0.0)) throw InputError("confidence: temperature must be positive");
    if (class_index >= z.size()) throw InputError("confidence: class index out of range");
    for (double v : z)
        if (!std::isfinite(v)) throw InputError("confidence: non-finite logit");
    std::vector<double> scaled(z.size()), p;
    for (std::size_t c = 0; c < z.size(); ++c) scaled[c] = z[c] / t.value;
    softmax_into(scaled, p);
    return p[class_index];
}

ConfidenceScores score_synthetics(const DatasetManifest& manifest,
                                  const FeatureTable& synthetic_features, const LinearProbe& probe,
                                  Temperature t) {
    std::unordered_map<std::string, std::size_t> class_index;
    for (std::size_t c = 0; c < probe.class_order.size(); ++c)
        class_index.emplace(probe.class_order[c], c);

    const std::size_t n = manifest.synthetics.size();
    std::vector<double> q(n, 0.0);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const auto& syn = manifest.synthetics[static_cast<std::size_t>(i)];
        const auto row = synthetic_features.index_of(syn.id);
        if (!row) {
            errors[static_cast<std::size_t>(i)] = "no feature row for synthetic '" + syn.id + "'";
            continue;
        }
        const auto cls = class_index.find(syn.class_label);
        if (cls == class_index.end()) {
            errors[static_cast<std::size_t>(i)] =
                "class '" + syn.class_label + "' unknown to the probe";
            continue;
        }
        q[static_cast<std::size_t>(i)] =
            confidence(logits(probe, synthetic_features.row(*row)), t, cls->second);
    }
    for (const auto& e : errors)
        if (!e.empty()) throw InputError("score: " + e);

    ConfidenceScores scores;
    for (std::size_t i = 0; i < n; ++i) scores.emplace(manifest.synthetics[i].id, q[i]);
    return scores;
}

SamplingDistribution build_distribution(const DatasetManifest& manifest,
                                        const ConfidenceScores& scores, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("distribution: alpha must be in [0,1]");
    const std::size_t n = manifest.reals.size();
    if (n == 0) throw InputError("distribution: manifest has no real images");

    std::unordered_map<std::string, std::vector<const SyntheticImageRecord*>> by_parent;
    for (const auto& syn : manifest.synthetics) by_parent[syn.parent_real_id].push_back(&syn);

    const auto score_of = [&](const std::string& id) {
        const auto it = scores.find(id);
        if (it == scores.end()) throw InputError("distribution: no score for synthetic '" + id + "'");
        if (!(it->second >= 0.0) || !std::isfinite(it->second))
            throw InputError("distribution: invalid score for synthetic '" + id + "'");
        return it->second;
    };

    SamplingDistribution dist;
    const double per_real = 1.0 / static_cast<double>(n);
    std::unordered_map<std::string, double> syn_prob;
    for (const auto& real : manifest.reals) {
        const auto kids = by_parent.find(real.id);
        const std::size_t m = kids == by_parent.end() ? 0 : kids->second.size();
        // A real with no synthetics keeps the whole 1/N share.
        const double p_real = m == 0 ? per_real : per_real * (1.0 - alpha);
        dist.entries.push_back({real.id, "real", p_real});
        if (m == 0) continue;
        double sum = 0.0;
        for (const auto* syn : kids->second) sum += score_of(syn->id);
        for (const auto* syn : kids->second) {
            const double share = sum > 0.0 ? score_of(syn->id) / sum : 1.0 / static_cast<double>(m);
            syn_prob[syn->id] = per_real * alpha * share;
        }
    }
    for (const auto& syn : manifest.synthetics)
        dist.entries.push_back({syn.id, "synthetic", syn_prob.at(syn.id)});
    return dist;
}

std::vector<std::string> sample_stream(const SamplingDistribution& dist, std::uint64_t seed,
                                       std::size_t count) {
    if (dist.entries.empty()) throw InputError("sample: empty distribution");
    std::vector<double> cumulative(dist.entries.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.entries.size(); ++i) {
        const double p = dist.entries[i].probability;
        if (!(p >= 0.0) || !std::isfinite(p))
            throw InputError("sample: invalid probability for '" + dist.entries[i].image_id + "'");
        acc += p;
        cumulative[i] = acc;
    }
    if (std::abs(acc - 1.0) > 1e-9) throw InputError("sample: probabilities do not sum to 1");

    Rng rng(seed);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = rng.uniform01() * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        out.push_back(dist.entries[static_cast<std::size_t>(it - cumulative.begin())].image_id);
    }
    return out;
}

void save_scores(const ConfidenceScores& scores, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "synthetic_id,q\n";
    for (const auto& [id, q] : scores) out << id << ',' << format_double(q) << "\n";
    atomic_write_file(path, out.str());
}

ConfidenceScores load_scores(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "synthetic_id,q")
        throw InputError("scores: header must be synthetic_id,q");
    ConfidenceScores scores;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 2) throw InputError("scores: malformed row '" + line + "'");
        const auto q = parse_double(trim(cells[1]));
        if (!q || !(*q >= 0.0 && *q <= 1.0))
            throw InputError("scores: q out of [0,1] for '" + cells[0] + "'");
        if (!scores.emplace(cells[0], *q).second)
            throw InputError("scores: duplicate id '" + cells[0] + "'");
    }
    return scores;
}

void save_distribution(const SamplingDistribution& dist, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "image_id,kind,probability\n";
    for (const auto& e : dist.entries)
        out << e.image_id << ',' << e.kind << ',' << format_double(e.probability) << "\n";
    atomic_write_file(path, out.str());
}

SamplingDistribution load_distribution(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "image_id,kind,probability")
        throw InputError("distribution: header must be image_id,kind,probability");
    SamplingDistribution dist;
    double sum = 0.0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 3) throw InputError("distribution: malformed row '" + line + "'");
        if (cells[1] != "real" && cells[1] != "synthetic")
            throw InputError("distribution: unknown kind '" + cells[1] + "'");
        const auto p = parse_double(trim(cells[2]));
        if (!p || !(*p >= 0.0)) throw InputError("distribution: bad probability for '" + cells[0] + "'");
        sum += *p;
        dist.entries.push_back({cells[0], cells[1], *p});
    }
    if (dist.entries.empty()) throw InputError("distribution: no entries in " + path.string());
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError("distribution: probabilities sum to " + format_double(sum));
    return dist;
}

}  // namespace diagen
