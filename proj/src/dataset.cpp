#include "ddae/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ddae/errors.hpp"
#include "ddae/png_io.hpp"

namespace ddae {

std::vector<CovariateRecord> Dataset::records() const {
    std::vector<CovariateRecord> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.covariates);
    return out;
}

std::vector<Image> Dataset::images() const {
    std::vector<Image> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
}

Dataset Dataset::filter_site(const std::string& site) const {
    Dataset out;
    for (const auto& s : samples) {
        if (s.covariates.site == site) out.samples.push_back(s);
    }
    return out;
}

Dataset Dataset::subset(std::span<const size_t> indices) const {
    Dataset out;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples.at(i));
    return out;
}

std::string Dataset::modal_site() const {
    if (samples.empty()) throw std::invalid_argument("modal_site: empty dataset");
    std::map<std::string, size_t> counts;
    for (const auto& s : samples) ++counts[s.covariates.site];
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    return best->first;
}

namespace {

void check_id(const std::string& id) {
    if (id.empty() || id.find_first_of(",/\\\n\r\"") != std::string::npos || id == "." || id == "..") {
        throw DataError("invalid sample id '" + id + "'");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

struct CsvRow {
    size_t line = 0;
    std::string id;
    CovariateRecord record;
};

std::vector<CsvRow> read_covariates_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open covariate CSV " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty CSV");
    const auto header = split_csv_line(trim(line));
    std::map<std::string, size_t> col;
    for (size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
    for (const char* name : {"id", "age", "sex", "site"}) {
        if (!col.count(name)) throw DataError(path.string() + ": missing column '" + name + "'");
    }
    std::vector<CsvRow> rows;
    std::set<std::string> seen;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        auto fail = [&](const std::string& why) -> DataError {
            return DataError(path.string() + " row " + std::to_string(line_no) + " ('" + line + "'): " + why);
        };
        if (f.size() != header.size()) throw fail("expected " + std::to_string(header.size()) + " fields");
        CsvRow row;
        row.line = line_no;
        row.id = trim(f[col["id"]]);
        try {
            check_id(row.id);
        } catch (const DataError& e) {
            throw fail(e.what());
        }
        if (!seen.insert(row.id).second) throw fail("duplicate id");
        const auto age_s = trim(f[col["age"]]);
        try {
            size_t used = 0;
            row.record.age = std::stod(age_s, &used);
            if (used != age_s.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw fail("unparsable age '" + age_s + "'");
        }
        if (!std::isfinite(row.record.age) || row.record.age < 0.0 || row.record.age > 150.0) {
            throw fail("age out of range");
        }
        const auto sex_s = trim(f[col["sex"]]);
        if (sex_s != "0" && sex_s != "1") throw fail("sex must be 0 or 1, got '" + sex_s + "'");
        row.record.sex = sex_s == "1" ? 1 : 0;
        row.record.site = trim(f[col["site"]]);
        if (row.record.site.empty()) throw fail("empty site");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void write_covariates_csv(const std::filesystem::path& path, const Dataset& dataset) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,age,sex,site\n";
    for (const auto& s : dataset.samples) {
        out << s.id << ',' << std::setprecision(10) << s.covariates.age << ',' << s.covariates.sex << ','
            << s.covariates.site << '\n';
    }
}

void save_dataset(const std::filesystem::path& root, const Dataset& dataset) {
    std::set<std::string> ids;
    for (const auto& s : dataset.samples) {
        check_id(s.id);
        if (!ids.insert(s.id).second) throw DataError("output path collision: duplicate id '" + s.id + "'");
    }
    std::filesystem::create_directories(root / "images");
    for (const auto& s : dataset.samples) write_png_gray8(root / "images" / (s.id + ".png"), s.image);
    write_covariates_csv(root / "covariates.csv", dataset);
}

Dataset load_dataset(const std::filesystem::path& root) {
    Dataset ds;
    for (auto& row : read_covariates_csv(root / "covariates.csv")) {
        const auto img_path = root / "images" / (row.id + ".png");
        if (!std::filesystem::exists(img_path)) {
            throw DataError((root / "covariates.csv").string() + " row " + std::to_string(row.line) + ": missing image " +
                            img_path.string());
        }
        ds.samples.push_back(ImageSample{row.id, row.record, read_png_gray(img_path), img_path.string()});
    }
    return ds;
}

Image normalize_min_max(const Image& image) {
    Image out = image;
    if (image.pixels.empty()) return out;
    const auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
    const float lo_v = *lo;
    const float range = *hi - *lo;
    for (auto& p : out.pixels) p = range > 0.0f ? (p - lo_v) / range : 0.0f;
    return out;
}

Image resize_bilinear(const Image& image, int64_t rows, int64_t cols) {
    if (image.rows == rows && image.cols == cols) return image;
    Image out(rows, cols);
    const double sy = static_cast<double>(image.rows) / static_cast<double>(rows);
    const double sx = static_cast<double>(image.cols) / static_cast<double>(cols);
    for (int64_t r = 0; r < rows; ++r) {
        const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.rows - 1));
        const auto y0 = static_cast<int64_t>(std::floor(y));
        const auto y1 = std::min(y0 + 1, image.rows - 1);
        const double wy = y - static_cast<double>(y0);
        for (int64_t c = 0; c < cols; ++c) {
            const double x =
                std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.cols - 1));
            const auto x0 = static_cast<int64_t>(std::floor(x));
            const auto x1 = std::min(x0 + 1, image.cols - 1);
            const double wx = x - static_cast<double>(x0);
            const double top = image.at(y0, x0) * (1.0 - wx) + image.at(y0, x1) * wx;
            const double bottom = image.at(y1, x0) * (1.0 - wx) + image.at(y1, x1) * wx;
            out.at(r, c) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
        }
    }
    return out;
}

Dataset ingest(const std::filesystem::path& image_dir, const std::filesystem::path& covariates_csv,
               const IngestOptions& options) {
    if (options.resolution < 1) throw std::invalid_argument("ingest: resolution must be positive");
    Dataset ds;
    for (auto& row : read_covariates_csv(covariates_csv)) {
        const auto img_path = image_dir / (row.id + ".png");
        if (!std::filesystem::exists(img_path)) {
            throw DataError(covariates_csv.string() + " row " + std::to_string(row.line) + ": missing image " +
                            img_path.string());
        }
        auto img = resize_bilinear(read_png_gray(img_path), options.resolution, options.resolution);
        ds.samples.push_back(ImageSample{row.id, row.record, normalize_min_max(img), img_path.string()});
    }
    return ds;
}

}  // namespace ddae
