#include "msscanet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "msscanet/errors.hpp"

namespace msscanet {

std::vector<const ManifestRecord*> DatasetManifest::split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest file: " + path);

    DatasetManifest m;
    std::string line;
    int64_t line_no = 0;
    bool header_seen = false;
    std::set<std::string> seen_paths;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            // optional scale declaration: "# mos_scale = lo,hi"
            const auto eq = line.find('=');
            if (line.find("mos_scale") != std::string::npos && eq != std::string::npos) {
                const auto vals = split_csv_row(line.substr(eq + 1));
                if (vals.size() != 2)
                    throw DataError(path + ":" + std::to_string(line_no) + ": malformed mos_scale");
                try {
                    m.mos_lo = std::stod(vals[0]);
                    m.mos_hi = std::stod(vals[1]);
                } catch (const std::exception&) {
                    throw DataError(path + ":" + std::to_string(line_no) + ": malformed mos_scale");
                }
                if (m.mos_hi <= m.mos_lo)
                    throw DataError(path + ":" + std::to_string(line_no) + ": mos_scale must satisfy lo < hi");
            }
            continue;
        }
        if (!header_seen) {
            if (line != "path,mos,dataset,split")
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": expected header 'path,mos,dataset,split', got '" + line + "'");
            header_seen = true;
            continue;
        }
        const auto fields = split_csv_row(line);
        if (fields.size() != 4)
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed row, expected 4 fields, got " +
                            std::to_string(fields.size()));
        ManifestRecord r;
        r.path = fields[0];
        try {
            r.mos = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed MOS value '" + fields[1] + "'");
        }
        r.dataset = fields[2];
        r.split = fields[3];
        if (r.split != "train" && r.split != "test")
            throw DataError(path + ":" + std::to_string(line_no) + ": split must be train or test, got '" +
                            r.split + "'");
        if (!seen_paths.insert(r.path).second)
            throw DataError(path + ":" + std::to_string(line_no) + ": duplicate image path '" + r.path + "'");
        m.records.push_back(std::move(r));
    }
    if (!header_seen) throw DataError(path + ": missing manifest header");
    if (m.records.empty()) throw DataError(path + ": no records");
    for (size_t i = 0; i < m.records.size(); ++i)
        if (m.records[i].mos < m.mos_lo || m.records[i].mos > m.mos_hi)
            throw DataError(path + ": record " + std::to_string(i + 1) + " has MOS " +
                            std::to_string(m.records[i].mos) + " outside declared scale [" +
                            std::to_string(m.mos_lo) + "," + std::to_string(m.mos_hi) + "]");
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest file: " + path);
    out << "# mos_scale = " << m.mos_lo << "," << m.mos_hi << "\n";
    out << "path,mos,dataset,split\n";
    out.precision(17);
    for (const auto& r : m.records)
        out << r.path << "," << r.mos << "," << r.dataset << "," << r.split << "\n";
    if (!out) throw DataError("write failure while saving manifest: " + path);
}

TensorPtr read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file: " + path);

    auto next_token = [&]() -> std::string {
        std::string tok;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {
                }
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        return tok;
    };

    if (next_token() != "P6") throw DataError(path + ": not a binary PPM (P6) file");
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(next_token());
        h = std::stoll(next_token());
        maxval = std::stoll(next_token());
    } catch (const std::exception&) {
        throw DataError(path + ": malformed PPM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255)
        throw DataError(path + ": unsupported PPM geometry or max value (need 8-bit, got max " +
                        std::to_string(maxval) + ")");

    std::vector<unsigned char> buf(static_cast<size_t>(3 * w * h));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
        throw DataError(path + ": truncated PPM payload");

    std::vector<double> data(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                data[static_cast<size_t>((c * h + y) * w + x)] =
                    static_cast<double>(buf[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0;
    return tensor({3, h, w}, std::move(data));
}

void write_ppm(const TensorPtr& image, const std::string& path) {
    if (image->rank() != 3 || image->shape[0] != 3)
        throw ShapeError("write_ppm: image must be [3,H,W], got " + shape_str(image->shape));
    const int64_t h = image->shape[1], w = image->shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image file: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(3 * w * h));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const double v = image->data[static_cast<size_t>((c * h + y) * w + x)];
                const double clamped = std::min(1.0, std::max(0.0, v));
                buf[static_cast<size_t>((y * w + x) * 3 + c)] =
                    static_cast<unsigned char>(std::llround(clamped * 255.0));
            }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failure while saving image: " + path);
}

TensorPtr synth_base_image(int64_t size, Rng& rng) {
    std::vector<double> img(static_cast<size_t>(3 * size * size), 0.5);
    const double two_pi = 6.283185307179586476925286766559;

    // layered sinusoidal gratings with per-channel amplitude variation
    for (int g = 0; g < 4; ++g) {
        const double freq = rng.uniform(2.0, 12.0);
        const double theta = rng.uniform(0.0, two_pi);
        const double phase = rng.uniform(0.0, two_pi);
        const double amp = rng.uniform(0.05, 0.14);
        const double wx = two_pi * freq * std::cos(theta) / static_cast<double>(size);
        const double wy = two_pi * freq * std::sin(theta) / static_cast<double>(size);
        double chan_amp[3];
        for (auto& a : chan_amp) a = amp * rng.uniform(0.7, 1.3);
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                const double v = std::sin(wx * static_cast<double>(x) + wy * static_cast<double>(y) + phase);
                for (int64_t c = 0; c < 3; ++c)
                    img[static_cast<size_t>((c * size + y) * size + x)] += chan_amp[c] * v;
            }
    }

    // a few hard-edged rectangles for structure
    for (int rct = 0; rct < 3; ++rct) {
        const int64_t rw = 4 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(size / 2)));
        const int64_t rh = 4 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(size / 2)));
        const int64_t x0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(size - 3)));
        const int64_t y0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(size - 3)));
        const double delta = rng.uniform(-0.18, 0.18);
        for (int64_t y = y0; y < std::min(size, y0 + rh); ++y)
            for (int64_t x = x0; x < std::min(size, x0 + rw); ++x)
                for (int64_t c = 0; c < 3; ++c)
                    img[static_cast<size_t>((c * size + y) * size + x)] += delta;
    }

    for (auto& v : img) v = std::min(0.85, std::max(0.15, v));
    return tensor({3, size, size}, std::move(img));
}

namespace {

TensorPtr gaussian_blur(const TensorPtr& image, double sigma) {
    const int64_t h = image->shape[1], w = image->shape[2];
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    auto clamp = [](int64_t v, int64_t n) { return std::min(n - 1, std::max<int64_t>(0, v)); };
    std::vector<double> tmp(image->data.size()), out(image->data.size());
    for (int64_t c = 0; c < 3; ++c) {
        const double* src = image->data.data() + c * h * w;
        double* t = tmp.data() + c * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    s += kernel[static_cast<size_t>(i + radius)] * src[y * w + clamp(x + i, w)];
                t[y * w + x] = s;
            }
        double* o = out.data() + c * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    s += kernel[static_cast<size_t>(i + radius)] * t[clamp(y + i, h) * w + x];
                o[y * w + x] = s;
            }
    }
    return tensor(image->shape, std::move(out));
}

TensorPtr additive_noise(const TensorPtr& image, double sigma, Rng& rng) {
    std::vector<double> out(image->data);
    for (auto& v : out) v = std::min(1.0, std::max(0.0, v + sigma * rng.normal()));
    return tensor(image->shape, std::move(out));
}

TensorPtr block_average(const TensorPtr& image, int64_t block) {
    const int64_t h = image->shape[1], w = image->shape[2];
    std::vector<double> out(image->data.size());
    for (int64_t c = 0; c < 3; ++c) {
        const double* src = image->data.data() + c * h * w;
        double* o = out.data() + c * h * w;
        for (int64_t by = 0; by < h; by += block)
            for (int64_t bx = 0; bx < w; bx += block) {
                const int64_t y1 = std::min(h, by + block), x1 = std::min(w, bx + block);
                double s = 0.0;
                for (int64_t y = by; y < y1; ++y)
                    for (int64_t x = bx; x < x1; ++x) s += src[y * w + x];
                s /= static_cast<double>((y1 - by) * (x1 - bx));
                for (int64_t y = by; y < y1; ++y)
                    for (int64_t x = bx; x < x1; ++x) o[y * w + x] = s;
            }
    }
    return tensor(image->shape, std::move(out));
}

}  // namespace

TensorPtr apply_distortion(const TensorPtr& image, const std::string& kind, double severity,
                           double severity_max, Rng& rng) {
    if (severity < 0.0 || severity_max <= 0.0 || severity > severity_max)
        throw UsageError("apply_distortion: severity " + std::to_string(severity) +
                         " outside [0, " + std::to_string(severity_max) + "]");
    if (severity == 0.0) return tensor(image->shape, image->data);
    const double s = severity / severity_max;
    if (kind == "gaussian-blur") return gaussian_blur(image, 2.5 * s);
    if (kind == "additive-noise") return additive_noise(image, 0.25 * s, rng);
    if (kind == "block-artifact")
        return block_average(image, std::max<int64_t>(2, static_cast<int64_t>(std::llround(16.0 * s))));
    throw UsageError("apply_distortion: unknown distortion kind '" + kind + "'");
}

double high_frequency_energy(const TensorPtr& image) {
    const int64_t h = image->shape[1], w = image->shape[2];
    auto clamp = [](int64_t v, int64_t n) { return std::min(n - 1, std::max<int64_t>(0, v)); };
    double acc = 0.0;
    for (int64_t c = 0; c < 3; ++c) {
        const double* src = image->data.data() + c * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int64_t dy = -1; dy <= 1; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) s += src[clamp(y + dy, h) * w + clamp(x + dx, w)];
                const double diff = src[y * w + x] - s / 9.0;
                acc += diff * diff;
            }
    }
    return acc / static_cast<double>(image->size());
}

double pixel_variance(const TensorPtr& image) {
    double mu = 0.0;
    for (double v : image->data) mu += v;
    mu /= static_cast<double>(image->size());
    double var = 0.0;
    for (double v : image->data) var += (v - mu) * (v - mu);
    return var / static_cast<double>(image->size());
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
    if (spec.kinds.empty()) throw UsageError("generate_synthetic: no distortion kinds");
    if (spec.severities.empty() || spec.severities.front() < 0.0 || spec.severities.back() <= 0.0)
        throw UsageError("generate_synthetic: severities must be non-negative with a positive maximum");
    for (size_t i = 1; i < spec.severities.size(); ++i)
        if (spec.severities[i] <= spec.severities[i - 1])
            throw UsageError("generate_synthetic: severities must be strictly increasing");
    if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0)
        throw UsageError("generate_synthetic: train_fraction must be in [0,1]");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw DataError("generate_synthetic: cannot create output directory " + out_dir);

    const int64_t kinds = static_cast<int64_t>(spec.kinds.size());
    const int64_t sevs = static_cast<int64_t>(spec.severities.size());
    const double sev_max = spec.severities.back();

    DatasetManifest m;
    m.mos_lo = spec.mos_lo;
    m.mos_hi = spec.mos_hi;
    auto train_quota = [&](int64_t i) {
        // Bresenham-style assignment: test whenever the cumulative test
        // fraction crosses an integer.
        const double f = 1.0 - spec.train_fraction;
        return std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
    };

    for (int64_t i = 0; i < spec.count; ++i) {
        const int64_t kind_idx = i % kinds;
        const int64_t sev_idx = (i / kinds) % sevs;
        const int64_t base_id = i / (kinds * sevs);

        Rng base_rng(derive_seed(spec.seed, static_cast<uint64_t>(base_id)));
        auto base = synth_base_image(spec.image_size, base_rng);
        Rng dist_rng(derive_seed(spec.seed, 0x10000000ULL + static_cast<uint64_t>(i)));
        const double severity = spec.severities[static_cast<size_t>(sev_idx)];
        auto img = apply_distortion(base, spec.kinds[static_cast<size_t>(kind_idx)], severity, sev_max,
                                    dist_rng);

        char name[128];
        std::snprintf(name, sizeof(name), "img_%05lld_%s_s%lld.ppm", static_cast<long long>(i),
                      spec.kinds[static_cast<size_t>(kind_idx)].c_str(), static_cast<long long>(sev_idx));
        const std::string path = out_dir + "/" + name;
        write_ppm(img, path);

        ManifestRecord r;
        r.path = path;
        r.mos = spec.mos_lo + (1.0 - severity / sev_max) * (spec.mos_hi - spec.mos_lo);
        r.dataset = spec.tag;
        r.split = train_quota(i) ? "test" : "train";
        m.records.push_back(std::move(r));
    }

    save_manifest(m, out_dir + "/manifest.csv");
    return m;
}

}  // namespace msscanet
