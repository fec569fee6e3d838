#include "ddae/evalsuite.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ddae/errors.hpp"
#include "ddae/image.hpp"
#include "ddae/png_io.hpp"

namespace ddae {

namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    if (c.dim() != 2) throw std::invalid_argument("to_eigen: expected a 2-D tensor");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(c.size(0), c.size(1));
    std::memcpy(m.data(), c.data_ptr<double>(), sizeof(double) * static_cast<size_t>(c.numel()));
    return m;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pcc: need two equally long series");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw std::domain_error("pcc: zero-variance distance triangle");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> upper_triangle(const Eigen::MatrixXd& d) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < d.cols(); ++j) v.push_back(d(i, j));
    }
    return v;
}

std::vector<double> targets(const Probe& probe, const Dataset& ds) {
    std::vector<double> y;
    y.reserve(ds.size());
    for (const auto& s : ds.samples) {
        switch (probe.task()) {
            case ProbeTask::Site: y.push_back(static_cast<double>(probe.vocabulary().index_of(s.covariates.site))); break;
            case ProbeTask::Sex: y.push_back(s.covariates.sex); break;
            case ProbeTask::Age: y.push_back(s.covariates.age); break;
        }
    }
    return y;
}

// Targets as the loss expects them: class indices, 0/1 floats, or standardised ages.
torch::Tensor loss_targets(const Probe& probe, const Dataset& ds) {
    const auto y = targets(probe, ds);
    const auto n = static_cast<int64_t>(y.size());
    if (probe.task() == ProbeTask::Site) {
        std::vector<int64_t> idx(y.begin(), y.end());
        return torch::tensor(idx, torch::kInt64).view({n});
    }
    std::vector<float> v;
    for (double t : y) {
        v.push_back(static_cast<float>(probe.task() == ProbeTask::Age ? (t - probe.target_mean()) / probe.target_std() : t));
    }
    return torch::tensor(v, torch::kFloat32).view({n, 1});
}

torch::Tensor task_loss(ProbeTask task, const torch::Tensor& out, const torch::Tensor& target) {
    switch (task) {
        case ProbeTask::Site: return torch::nn::functional::cross_entropy(out, target);
        case ProbeTask::Sex: return torch::nn::functional::binary_cross_entropy_with_logits(out, target);
        case ProbeTask::Age: return torch::mse_loss(out, target);
    }
    throw std::logic_error("unreachable");
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& saved) {
    torch::NoGradGuard guard;
    auto params = m.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

uint64_t fnv1a(uint64_t h, const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string fmt(const MetricSummary& m, int precision = 4) {
    return m.stddev ? fmt(m.mean, precision) + " +/- " + fmt(*m.stddev, precision) : fmt(m.mean, precision);
}

nlohmann::json summary_json(const MetricSummary& m) {
    nlohmann::json j{{"mean", m.mean}, {"values", m.values}};
    if (m.stddev) j["std"] = *m.stddev;
    return j;
}

nlohmann::json row_json(const ProbeRow& r) {
    return {{"site_accuracy", summary_json(r.site_accuracy)},
            {"age_r2", summary_json(r.age_r2)},
            {"sex_accuracy", summary_json(r.sex_accuracy)}};
}

}  // namespace

// ---- probes -------------------------------------------------------------------------------

std::string to_string(ProbeTask task) {
    switch (task) {
        case ProbeTask::Site: return "site";
        case ProbeTask::Sex: return "sex";
        case ProbeTask::Age: return "age";
    }
    return "?";
}

ProbeTask probe_task_from_string(const std::string& name) {
    if (name == "site") return ProbeTask::Site;
    if (name == "sex") return ProbeTask::Sex;
    if (name == "age") return ProbeTask::Age;
    throw std::invalid_argument("unknown probe task '" + name + "' (expected site, sex or age)");
}

void ProbeConfig::validate() const {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("probe: validation_fraction must lie in (0,1)");
    }
    if (epochs < 1) throw std::invalid_argument("probe: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("probe: learning_rate must be > 0");
    if (patience < 1) throw std::invalid_argument("probe: patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("probe: batch_size must be >= 1");
}

ProbeNetImpl::ProbeNetImpl(int64_t resolution, int64_t outputs) {
    if (resolution < 8 || resolution % 8 != 0) throw std::invalid_argument("probe: resolution must be a multiple of 8");
    auto conv = [](int64_t in, int64_t out) {
        return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
    };
    conv1 = register_module("conv1", conv(1, 16));
    conv2 = register_module("conv2", conv(16, 32));
    conv3 = register_module("conv3", conv(32, 64));
    const int64_t flat = 64 * (resolution / 8) * (resolution / 8);
    fc1 = register_module("fc1", torch::nn::Linear(flat, 768));
    fc2 = register_module("fc2", torch::nn::Linear(768, 128));
    fc3 = register_module("fc3", torch::nn::Linear(128, outputs));
}

torch::Tensor ProbeNetImpl::features(const torch::Tensor& x) {
    auto h = torch::relu(conv1(x));
    h = torch::relu(conv2(h));
    h = torch::relu(conv3(h));
    h = torch::relu(fc1(h.flatten(1)));
    return torch::relu(fc2(h));
}

torch::Tensor ProbeNetImpl::forward(const torch::Tensor& x) { return fc3(features(x)); }

Probe::Probe(ProbeTask task, int64_t resolution, SiteVocabulary vocabulary, double target_mean, double target_std)
    : task_(task),
      resolution_(resolution),
      vocabulary_(std::move(vocabulary)),
      target_mean_(target_mean),
      target_std_(target_std),
      net_(resolution, task == ProbeTask::Site ? static_cast<int64_t>(vocabulary_.size()) : 1) {}

std::vector<double> Probe::predict(std::span<const Image> images) const {
    std::vector<double> out;
    if (images.empty()) return out;
    torch::NoGradGuard guard;
    net_->eval();
    const auto logits = net_->forward(images_to_tensor(images)).to(torch::kFloat64);
    for (int64_t i = 0; i < logits.size(0); ++i) {
        switch (task_) {
            case ProbeTask::Site: out.push_back(static_cast<double>(logits[i].argmax().item<int64_t>())); break;
            case ProbeTask::Sex: out.push_back(logits[i][0].item<double>() > 0.0 ? 1.0 : 0.0); break;
            case ProbeTask::Age: out.push_back(logits[i][0].item<double>() * target_std_ + target_mean_); break;
        }
    }
    return out;
}

Eigen::MatrixXd Probe::features(std::span<const Image> images) const {
    if (images.empty()) return Eigen::MatrixXd(0, 128);
    torch::NoGradGuard guard;
    net_->eval();
    return to_eigen(net_->features(images_to_tensor(images)));
}

Probe train_probe(const Dataset& train, const Dataset& validation, const ProbeConfig& config) {
    config.validate();
    if (train.empty()) throw std::invalid_argument("probe: empty training set");
    if (validation.empty()) throw std::invalid_argument("probe: empty validation set");
    const auto resolution = train.samples.front().image.rows;

    auto all_records = train.records();
    const auto val_records = validation.records();
    all_records.insert(all_records.end(), val_records.begin(), val_records.end());
    const auto vocab = SiteVocabulary::from_records(all_records);

    double mean = 0.0, stddev = 1.0;
    if (config.task == ProbeTask::Site) {
        if (SiteVocabulary::from_records(train.records()).size() < 2) {
            throw std::invalid_argument("probe: site task needs at least two sites in the training set");
        }
    } else if (config.task == ProbeTask::Sex) {
        std::set<int> sexes;
        for (const auto& s : train.samples) sexes.insert(s.covariates.sex);
        if (sexes.size() < 2) throw std::invalid_argument("probe: sex task needs both classes in the training set");
    } else {
        double sum = 0.0, sq = 0.0;
        for (const auto& s : train.samples) sum += s.covariates.age;
        mean = sum / static_cast<double>(train.size());
        for (const auto& s : train.samples) sq += (s.covariates.age - mean) * (s.covariates.age - mean);
        stddev = std::sqrt(sq / static_cast<double>(train.size()));
        if (!(stddev > 0.0)) stddev = 1.0;
    }

    torch::manual_seed(config.seed);
    Probe probe(config.task, resolution, vocab, mean, stddev);
    auto& net = probe.net();
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto rng = at::make_generator<at::CPUGeneratorImpl>(config.seed);

    const auto train_images = train.images();
    const auto x_train = images_to_tensor(train_images);
    const auto y_train = loss_targets(probe, train);
    const auto val_images = validation.images();
    const auto x_val = images_to_tensor(val_images);
    const auto y_val = loss_targets(probe, validation);
    const auto n = x_train.size(0);

    double best = std::numeric_limits<double>::infinity();
    auto best_params = snapshot(*net);
    int64_t since_best = 0;
    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        net->train();
        const auto perm = torch::randperm(n, rng, torch::kInt64);
        for (int64_t start = 0; start < n; start += config.batch_size) {
            const auto idx = perm.slice(0, start, std::min(n, start + config.batch_size));
            opt.zero_grad();
            auto loss = task_loss(config.task, net->forward(x_train.index_select(0, idx)), y_train.index_select(0, idx));
            loss.backward();
            opt.step();
        }
        double val_loss;
        {
            torch::NoGradGuard guard;
            net->eval();
            val_loss = task_loss(config.task, net->forward(x_val), y_val).item<double>();
        }
        if (!std::isfinite(val_loss)) throw DivergenceError("probe validation loss", val_loss);
        if (val_loss < best) {
            best = val_loss;
            best_params = snapshot(*net);
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    restore(*net, best_params);
    net->eval();
    return probe;
}

Probe train_probe(const Dataset& dataset, const ProbeConfig& config) {
    config.validate();
    const auto split = split_indices(dataset.size(), 0.0, config.validation_fraction, config.seed);
    return train_probe(dataset.subset(split.train), dataset.subset(split.validation), config);
}

double accuracy(std::span<const double> predicted, std::span<const double> truth) {
    if (truth.empty()) throw std::invalid_argument("accuracy: empty test set");
    if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
    size_t hits = 0;
    for (size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double r2_score(std::span<const double> predicted, std::span<const double> truth) {
    if (truth.empty()) throw std::invalid_argument("r2: empty test set");
    if (predicted.size() != truth.size()) throw std::invalid_argument("r2: length mismatch");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (!(ss_tot > 0.0)) throw std::domain_error("r2: test targets have zero variance");
    return 1.0 - ss_res / ss_tot;
}

namespace {

void require_task(const Probe& probe, ProbeTask task) {
    if (probe.task() != task) {
        throw std::invalid_argument("probe trained for " + to_string(probe.task()) + ", scored as " + to_string(task));
    }
}

}  // namespace

double site_accuracy(const Probe& probe, const Dataset& test) {
    require_task(probe, ProbeTask::Site);
    const auto images = test.images();
    return accuracy(probe.predict(images), targets(probe, test));
}

double sex_accuracy(const Probe& probe, const Dataset& test) {
    require_task(probe, ProbeTask::Sex);
    const auto images = test.images();
    return accuracy(probe.predict(images), targets(probe, test));
}

double age_r2(const Probe& probe, const Dataset& test) {
    require_task(probe, ProbeTask::Age);
    const auto images = test.images();
    return r2_score(probe.predict(images), targets(probe, test));
}

double probe_score(const Probe& probe, const Dataset& test) {
    switch (probe.task()) {
        case ProbeTask::Site: return site_accuracy(probe, test);
        case ProbeTask::Sex: return sex_accuracy(probe, test);
        case ProbeTask::Age: return age_r2(probe, test);
    }
    throw std::logic_error("unreachable");
}

// ---- splits -------------------------------------------------------------------------------

DataSplit split_indices(size_t n, double test_fraction, double validation_fraction, uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) throw std::invalid_argument("split: test_fraction in [0,1)");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
        throw std::invalid_argument("split: validation_fraction in [0,1)");
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with explicit draws keeps the split identical across standard libraries.
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const auto n_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(n)));
    const auto rest = n - n_test;
    auto n_val = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(rest)));
    if (validation_fraction > 0.0 && n_val == 0 && rest >= 2) n_val = 1;
    DataSplit s;
    s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                        order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
    for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

void write_split_csv(const std::filesystem::path& path, const Dataset& dataset, const DataSplit& split) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split manifest " + path.string());
    out << "id,split\n";
    const std::array<std::pair<const char*, const std::vector<size_t>*>, 3> parts{
        {{"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}}};
    for (const auto& [name, idx] : parts) {
        for (auto i : *idx) out << dataset.samples.at(i).id << ',' << name << '\n';
    }
}

// ---- within-site variability --------------------------------------------------------------

Eigen::MatrixXd distance_matrix(std::span<const Image> images) {
    const auto n = static_cast<Eigen::Index>(images.size());
    if (n < 2) throw std::invalid_argument("distance_matrix: need at least two images");
    const auto p = images.front().size();
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& img = images[static_cast<size_t>(i)];
        if (!img.same_shape(images.front())) throw std::invalid_argument("distance_matrix: images differ in shape");
        for (int64_t j = 0; j < p; ++j) x(i, j) = img.pixels[static_cast<size_t>(j)];
    }
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
        }
    }
    return d;
}

double pcc(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols()) {
        throw std::invalid_argument("pcc: matrices must be square and equally sized");
    }
    if (a.rows() < 2) throw std::invalid_argument("pcc: need at least two subjects");
    return pearson(upper_triangle(a), upper_triangle(b));
}

// ---- Frechet distance ---------------------------------------------------------------------

GaussianStats fit_gaussian(const Eigen::MatrixXd& features, bool shrinkage) {
    const auto n = features.rows();
    const auto d = features.cols();
    if (n < 1) throw std::invalid_argument("frechet: empty feature set");
    if (!shrinkage && n <= d) {
        throw std::invalid_argument("frechet: " + std::to_string(n) + " samples cannot support a " + std::to_string(d) +
                                    "-dimensional covariance; enable shrinkage");
    }
    GaussianStats g;
    g.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centred = features.rowwise() - g.mean.transpose();
    g.covariance = n > 1 ? Eigen::MatrixXd(centred.transpose() * centred / static_cast<double>(n - 1))
                         : Eigen::MatrixXd::Zero(d, d);
    if (shrinkage) g.covariance.diagonal().array() += 1e-6;
    return g;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet: feature dimensions differ");
    // tr((A B)^{1/2}) = tr((A^{1/2} B A^{1/2})^{1/2}); the inner matrix is symmetric PSD.
    const Eigen::MatrixXd root_a = psd_sqrt(a.covariance);
    const Eigen::MatrixXd inner = root_a * b.covariance * root_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    return std::max(0.0, value);
}

double frechet_distance(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b, bool shrinkage) {
    return frechet_distance(fit_gaussian(features_a, shrinkage), fit_gaussian(features_b, shrinkage));
}

// ---- latent embedding ---------------------------------------------------------------------

Eigen::MatrixXd latent_pairs(const DdaeModel& model, const Dataset& dataset,
                             const std::optional<std::string>& site_override) {
    constexpr size_t chunk = 64;
    std::vector<torch::Tensor> rows;
    for (size_t start = 0; start < dataset.size(); start += chunk) {
        std::vector<Image> images;
        std::vector<CovariateRecord> records;
        for (size_t i = start; i < std::min(dataset.size(), start + chunk); ++i) {
            images.push_back(dataset.samples[i].image);
            records.push_back(dataset.samples[i].covariates);
            if (site_override) records.back().site = *site_override;
        }
        const auto zk = model.encode_known(std::span<const CovariateRecord>(records));
        const auto zu = model.encode_unknown(to_model_range(images_to_tensor(images)));
        rows.push_back(torch::cat({zk, zu}, 1));
    }
    if (rows.empty()) return Eigen::MatrixXd(0, 2 * model.config().latent_dim);
    return to_eigen(torch::cat(rows, 0));
}

Eigen::MatrixXd embed_latents_2d(const Eigen::MatrixXd& latents) {
    const auto n = latents.rows();
    if (n < 3) throw std::invalid_argument("embed_latents_2d: need at least three samples");
    const Eigen::MatrixXd centred = latents.rowwise() - latents.colwise().mean();
    Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(n, 2);
    if (centred.cwiseAbs().maxCoeff() == 0.0) return coords;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
    const Eigen::MatrixXd& v = svd.matrixV();
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, v.cols()); ++k) {
        Eigen::VectorXd dir = v.col(k);
        Eigen::Index arg;
        dir.cwiseAbs().maxCoeff(&arg);
        if (dir(arg) < 0) dir = -dir;  // sign convention for reproducible plots
        coords.col(k) = centred * dir;
    }
    return coords;
}

Separability separability(const Eigen::MatrixXd& coords, std::span<const std::string> labels) {
    if (coords.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw std::invalid_argument("separability: one label per row");
    }
    std::map<std::string, std::vector<Eigen::Index>> groups;
    for (size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
    std::map<std::string, Eigen::VectorXd> centroids;
    for (const auto& [label, rows] : groups) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(coords.cols());
        for (auto r : rows) c += coords.row(r).transpose();
        centroids[label] = c / static_cast<double>(rows.size());
    }
    Separability s;
    double spread = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        spread += (coords.row(static_cast<Eigen::Index>(i)).transpose() - centroids[labels[i]]).norm();
    }
    s.intra_spread = labels.empty() ? 0.0 : spread / static_cast<double>(labels.size());
    double inter = 0.0;
    size_t pairs = 0;
    for (auto a = centroids.begin(); a != centroids.end(); ++a) {
        for (auto b = std::next(a); b != centroids.end(); ++b) {
            inter += (a->second - b->second).norm();
            ++pairs;
        }
    }
    s.inter_centroid = pairs ? inter / static_cast<double>(pairs) : 0.0;
    return s;
}

void write_embedding_csv(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                         std::span<const std::string> ids, std::span<const std::string> labels) {
    if (coords.rows() != static_cast<Eigen::Index>(ids.size()) || ids.size() != labels.size()) {
        throw std::invalid_argument("write_embedding_csv: one id and label per row");
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,site,pc1,pc2\n" << std::setprecision(17);
    for (size_t i = 0; i < ids.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << ids[i] << ',' << labels[i] << ',' << coords(r, 0) << ',' << coords(r, 1) << '\n';
    }
}

void write_embedding_plot(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                          std::span<const std::string> labels, int size) {
    if (coords.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw std::invalid_argument("write_embedding_plot: one label per row");
    }
    static constexpr std::array<std::array<uint8_t, 3>, 8> palette{{{31, 119, 180},
                                                                     {255, 127, 14},
                                                                     {44, 160, 44},
                                                                     {214, 39, 40},
                                                                     {148, 103, 189},
                                                                     {140, 86, 75},
                                                                     {227, 119, 194},
                                                                     {127, 127, 127}}};
    std::map<std::string, size_t> colour;
    for (const auto& l : labels) colour.emplace(l, 0);
    size_t next = 0;
    for (auto& [label, c] : colour) c = next++ % palette.size();

    RgbImage img;
    img.rows = img.cols = size;
    img.rgb.assign(static_cast<size_t>(size) * static_cast<size_t>(size) * 3, 255);
    const int margin = size / 16;
    const int span = size - 2 * margin - 1;
    auto scale = [&](Eigen::Index col) {
        const double lo = coords.rows() ? coords.col(col).minCoeff() : 0.0;
        const double hi = coords.rows() ? coords.col(col).maxCoeff() : 0.0;
        return std::pair{lo, hi > lo ? hi - lo : 1.0};
    };
    const auto [x_lo, x_range] = scale(0);
    const auto [y_lo, y_range] = scale(1);
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        const int px = margin + static_cast<int>(std::lround((coords(i, 0) - x_lo) / x_range * span));
        const int py = size - 1 - margin - static_cast<int>(std::lround((coords(i, 1) - y_lo) / y_range * span));
        const auto& c = palette[colour[labels[static_cast<size_t>(i)]]];
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                const int x = px + dx, y = py + dy;
                if (x < 0 || y < 0 || x >= size || y >= size) continue;
                auto* p = &img.rgb[(static_cast<size_t>(y) * static_cast<size_t>(size) + static_cast<size_t>(x)) * 3];
                p[0] = c[0];
                p[1] = c[1];
                p[2] = c[2];
            }
        }
    }
    // Legend swatches, top-left, in label order.
    int row = 4;
    for (const auto& [label, c] : colour) {
        for (int y = row; y < row + 8 && y < size; ++y) {
            for (int x = 4; x < 12 && x < size; ++x) {
                auto* p = &img.rgb[(static_cast<size_t>(y) * static_cast<size_t>(size) + static_cast<size_t>(x)) * 3];
                p[0] = palette[c][0];
                p[1] = palette[c][1];
                p[2] = palette[c][2];
            }
        }
        row += 12;
    }
    write_png_rgb(path, img);
}

// ---- report -------------------------------------------------------------------------------

MetricSummary MetricSummary::from(std::vector<double> values) {
    MetricSummary m;
    m.values = std::move(values);
    if (m.values.empty()) return m;
    const double n = static_cast<double>(m.values.size());
    m.mean = std::accumulate(m.values.begin(), m.values.end(), 0.0) / n;
    if (m.values.size() >= 2) {
        double sq = 0.0;
        for (double v : m.values) sq += (v - m.mean) * (v - m.mean);
        m.stddev = std::sqrt(sq / (n - 1.0));
    }
    return m;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json pcc_sites = nlohmann::json::object();
    for (const auto& [site, v] : pcc_per_site) pcc_sites[site] = v;
    return {
        {"note",
         "Frechet distances use the 128-wide penultimate layer of a site probe trained once on the original "
         "dataset and then frozen; magnitudes are not comparable to Inception-based FID values."},
        {"seeds", seeds},
        {"reference_site", reference_site},
        {"fingerprints", {{"original", original_fingerprint}, {"harmonized", harmonized_fingerprint}}},
        {"unharmonized", row_json(unharmonized)},
        {"harmonized", row_json(harmonized)},
        {"pcc", {{"per_site", pcc_sites}, {"pooled", pcc_pooled}, {"concatenated", pcc_concatenated}}},
        {"frechet",
         {{"harmonized_vs_reference", frechet_harmonized_vs_reference},
          {"unharmonized_vs_reference", frechet_unharmonized_vs_reference},
          {"harmonized_vs_original", frechet_harmonized_vs_original}}},
    };
}

std::string EvalReport::table() const {
    std::ostringstream os;
    os << "Frechet distance: frozen site-probe features, not comparable to Inception FID.\n";
    os << "Reference site: " << reference_site << "; seeds: " << seeds.size() << "\n\n";
    const int w = 22;
    os << std::left << std::setw(14) << "Data" << std::setw(12) << "FID" << std::setw(w) << "Site Acc" << std::setw(w)
       << "Age R2" << std::setw(w) << "Sex Acc" << "PCC\n";
    os << std::setw(14) << "Unharmonized" << std::setw(12) << fmt(frechet_unharmonized_vs_reference, 3) << std::setw(w)
       << fmt(unharmonized.site_accuracy) << std::setw(w) << fmt(unharmonized.age_r2) << std::setw(w)
       << fmt(unharmonized.sex_accuracy) << "-\n";
    os << std::setw(14) << "Harmonized" << std::setw(12) << fmt(frechet_harmonized_vs_reference, 3) << std::setw(w)
       << fmt(harmonized.site_accuracy) << std::setw(w) << fmt(harmonized.age_r2) << std::setw(w)
       << fmt(harmonized.sex_accuracy) << fmt(pcc_pooled) << "\n\n";
    os << "PCC per site:";
    for (const auto& [site, v] : pcc_per_site) os << ' ' << site << '=' << fmt(v);
    os << "; concatenated=" << fmt(pcc_concatenated) << '\n';
    return os.str();
}

void check_paired(const Dataset& original, const Dataset& harmonized) {
    const size_t n = std::min(original.size(), harmonized.size());
    for (size_t i = 0; i < n; ++i) {
        if (original.samples[i].id != harmonized.samples[i].id) {
            throw DataError("id mismatch at position " + std::to_string(i) + ": original '" + original.samples[i].id +
                            "' vs harmonized '" + harmonized.samples[i].id + "'");
        }
    }
    if (original.size() != harmonized.size()) {
        const auto& longer = original.size() > harmonized.size() ? original : harmonized;
        throw DataError("id mismatch: '" + longer.samples[n].id + "' present only in the " +
                        (original.size() > harmonized.size() ? "original" : "harmonized") + " set");
    }
}

std::string dataset_fingerprint(const Dataset& dataset) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : dataset.samples) {
        h = fnv1a(h, s.id.data(), s.id.size());
        h = fnv1a(h, s.covariates.site.data(), s.covariates.site.size());
        const auto age_bits = std::bit_cast<uint64_t>(s.covariates.age);
        h = fnv1a(h, &age_bits, sizeof age_bits);
        h = fnv1a(h, &s.covariates.sex, sizeof s.covariates.sex);
        h = fnv1a(h, s.image.pixels.data(), s.image.pixels.size() * sizeof(float));
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

EvalReport evaluate(const Dataset& original, const Dataset& harmonized_in, const EvalOptions& options) {
    if (options.seeds.empty()) throw std::invalid_argument("evaluate: at least one seed is required");
    check_paired(original, harmonized_in);
    if (original.size() < 10) throw std::invalid_argument("evaluate: too few samples for probe splits");

    // Labels always come from the original records.
    Dataset harmonized = harmonized_in;
    for (size_t i = 0; i < harmonized.size(); ++i) harmonized.samples[i].covariates = original.samples[i].covariates;

    EvalReport report;
    report.seeds = options.seeds;
    report.reference_site = options.reference_site.value_or(original.modal_site());
    SiteVocabulary::from_records(original.records()).index_of(report.reference_site);
    report.original_fingerprint = dataset_fingerprint(original);
    report.harmonized_fingerprint = dataset_fingerprint(harmonized_in);

    std::array<std::vector<double>, 3> orig_scores, harm_scores;
    const std::array<ProbeTask, 3> tasks{ProbeTask::Site, ProbeTask::Age, ProbeTask::Sex};
    for (auto seed : options.seeds) {
        const auto split = split_indices(original.size(), options.test_fraction, options.probe.validation_fraction, seed);
        if (options.split_dir) {
            write_split_csv(*options.split_dir / ("split_seed" + std::to_string(seed) + ".csv"), original, split);
        }
        for (size_t t = 0; t < tasks.size(); ++t) {
            ProbeConfig cfg = options.probe;
            cfg.task = tasks[t];
            cfg.seed = seed;
            using Arm = std::pair<const Dataset*, std::vector<double>*>;
            for (auto [ds, scores] : {Arm{&original, &orig_scores[t]}, Arm{&harmonized, &harm_scores[t]}}) {
                const auto probe = train_probe(ds->subset(split.train), ds->subset(split.validation), cfg);
                scores->push_back(probe_score(probe, ds->subset(split.test)));
            }
        }
    }
    report.unharmonized = {MetricSummary::from(orig_scores[0]), MetricSummary::from(orig_scores[1]),
                           MetricSummary::from(orig_scores[2])};
    report.harmonized = {MetricSummary::from(harm_scores[0]), MetricSummary::from(harm_scores[1]),
                         MetricSummary::from(harm_scores[2])};

    // Within-site variability.
    std::vector<double> all_a, all_b;
    double weighted = 0.0, total_pairs = 0.0;
    for (const auto& site : SiteVocabulary::from_records(original.records()).sites()) {
        const auto a = original.filter_site(site).images();
        const auto b = harmonized.filter_site(site).images();
        if (a.size() < 3) continue;
        const auto da = distance_matrix(a);
        const auto db = distance_matrix(b);
        const double r = pcc(da, db);
        const double pairs = static_cast<double>(a.size() * (a.size() - 1) / 2);
        report.pcc_per_site[site] = r;
        weighted += pairs * r;
        total_pairs += pairs;
        const auto ua = upper_triangle(da), ub = upper_triangle(db);
        all_a.insert(all_a.end(), ua.begin(), ua.end());
        all_b.insert(all_b.end(), ub.begin(), ub.end());
    }
    if (total_pairs == 0.0) throw std::invalid_argument("evaluate: no site has three or more subjects for PCC");
    report.pcc_pooled = weighted / total_pairs;
    report.pcc_concatenated = pearson(all_a, all_b);

    // Frechet distances in the feature space of a frozen site probe fitted to the original data.
    ProbeConfig extractor_cfg = options.probe;
    extractor_cfg.task = ProbeTask::Site;
    extractor_cfg.seed = options.seeds.front();
    const auto extractor = train_probe(original, extractor_cfg);
    auto features_where = [&](const Dataset& ds, bool reference) {
        std::vector<Image> images;
        for (const auto& s : ds.samples) {
            if ((s.covariates.site == report.reference_site) == reference) images.push_back(s.image);
        }
        return extractor.features(images);
    };
    const auto ref_features = features_where(original, true);
    report.frechet_harmonized_vs_reference =
        frechet_distance(features_where(harmonized, false), ref_features, options.shrinkage);
    report.frechet_unharmonized_vs_reference =
        frechet_distance(features_where(original, false), ref_features, options.shrinkage);
    const auto all_orig = original.images();
    const auto all_harm = harmonized.images();
    report.frechet_harmonized_vs_original =
        frechet_distance(extractor.features(all_harm), extractor.features(all_orig), options.shrinkage);
    return report;
}

}  // namespace ddae
