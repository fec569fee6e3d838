#include "ddae/harmonize.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

#include "ddae/errors.hpp"

namespace ddae {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

Image harmonize_image(const Image& x0, const CovariateRecord& record, const std::string& target_site,
                      const DdaeModel& model, const SamplerConfig& sampler) {
    const auto res = model.config().resolution;
    if (x0.rows != res || x0.cols != res) {
        throw std::invalid_argument("harmonize: image is " + std::to_string(x0.rows) + "x" + std::to_string(x0.cols) +
                                    ", model expects " + std::to_string(res) + "x" + std::to_string(res));
    }
    validate_record(record, model.meta().norm);
    model.vocabulary().index_of(record.site);
    model.vocabulary().index_of(target_site);

    const auto x = image_to_tensor(x0);
    const auto z_upsilon = model.encode_unknown(to_model_range(x));
    const CovariateRecord source[] = {record};
    const auto z_kappa_source = model.encode_known(std::span<const CovariateRecord>(source));
    const auto x_T = ddim_encode(x, z_kappa_source, z_upsilon, model, sampler);

    CovariateRecord target_record = record;
    target_record.site = target_site;
    const CovariateRecord target[] = {target_record};
    const auto z_kappa_target = model.encode_known(std::span<const CovariateRecord>(target));
    return tensor_to_image(ddim_decode(x_T, z_kappa_target, z_upsilon, model, sampler));
}

Image reconstruct_image(const Image& x0, const CovariateRecord& record, const DdaeModel& model,
                        const SamplerConfig& sampler) {
    return harmonize_image(x0, record, record.site, model, sampler);
}

HarmonizationResult harmonize_dataset(const HarmonizationJob& job) {
    if (!job.source || !job.model) throw std::invalid_argument("harmonize_dataset: job needs a dataset and a model");
    const auto& source = *job.source;
    const auto& model = *job.model;
    job.sampler.validate(model.schedule().steps());

    HarmonizationResult result;
    if (job.target_site) {
        result.target_site = *job.target_site;
    } else if (!source.empty()) {
        result.target_site = source.modal_site();
    }
    if (!source.empty()) model.vocabulary().index_of(result.target_site);

    for (const auto& sample : source.samples) {
        ManifestRow row{sample.id, sample.source_path, sample.covariates.age, sample.covariates.sex,
                        sample.covariates.site, result.target_site, "ok"};
        try {
            auto out = quantize_8bit(harmonize_image(sample.image, sample.covariates, result.target_site, model,
                                                     job.sampler));
            ImageSample harmonized = sample;
            harmonized.image = std::move(out);
            result.harmonized.samples.push_back(std::move(harmonized));
        } catch (const std::exception& e) {
            row.status = std::string("error: ") + e.what();
            ++result.failures;
        }
        result.manifest.push_back(std::move(row));
    }
    if (job.output_dir) write_harmonized_output(*job.output_dir, result);
    return result;
}

void write_harmonized_output(const std::filesystem::path& dir, const HarmonizationResult& result) {
    save_dataset(dir, result.harmonized);
    write_manifest_csv(dir / "manifest.csv", result.manifest);
}

void write_manifest_csv(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << "id,source_path,age,sex,site_original,site_target,status\n";
    for (const auto& r : rows) {
        out << csv_field(r.id) << ',' << csv_field(r.source_path) << ',' << format_number(r.age) << ',' << r.sex << ','
            << csv_field(r.site_original) << ',' << csv_field(r.site_target) << ',' << csv_field(r.status) << '\n';
    }
    if (!out) throw DataError("failed writing manifest " + path.string());
}

std::vector<ManifestRow> read_manifest_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"id", "source_path", "age", "sex",
                                                                                     "site_original", "site_target",
                                                                                     "status"}) {
        throw DataError("manifest " + path.string() + ": unexpected header");
    }
    std::vector<ManifestRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) throw DataError("manifest row " + std::to_string(line_no) + ": expected 7 fields: " + line);
        try {
            rows.push_back({f[0], f[1], std::stod(f[2]), std::stoi(f[3]), f[4], f[5], f[6]});
        } catch (const std::logic_error&) {
            throw DataError("manifest row " + std::to_string(line_no) + ": unparsable: " + line);
        }
    }
    return rows;
}

}  // namespace ddae
