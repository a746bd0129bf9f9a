#include "headfem/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "headfem/error.hpp"
#include "headfem/io.hpp"
#include "headfem/rng.hpp"

namespace headfem {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (seps.find(c) != std::string::npos) {
            if (!trim(cur).empty()) {
                out.push_back(trim(cur));
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) {
        out.push_back(trim(cur));
    }
    return out;
}

} // namespace

const IniEntry* IniSection::find(const std::string& key) const {
    for (const auto& e : entries) {
        if (e.key == key) {
            return &e;
        }
    }
    return nullptr;
}

IniDocument IniDocument::parse(const std::string& text, const std::string& source) {
    IniDocument doc;
    doc.source = source;
    std::istringstream in(text);
    std::string raw;
    int number = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(source + ":" + std::to_string(number) + ": " + msg);
    };
    while (std::getline(in, raw)) {
        ++number;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == ';' || line[0] == '#') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                fail("unterminated section header");
            }
            const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
            if (name.empty()) {
                fail("empty section name");
            }
            if (const auto* prev = doc.find(name)) {
                fail("duplicate section [" + name + "] (first at line " +
                     std::to_string(prev->line) + ")");
            }
            doc.sections.push_back({name, number, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail("expected 'key = value' or '[section]'");
        }
        if (doc.sections.empty()) {
            fail("key outside of any section");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) {
            fail("empty key");
        }
        auto& sec = doc.sections.back();
        if (const auto* prev = sec.find(key)) {
            fail("duplicate key '" + key + "' in [" + sec.name + "] (first at line " +
                 std::to_string(prev->line) + ")");
        }
        sec.entries.push_back({key, value, number});
    }
    return doc;
}

IniDocument IniDocument::load(const std::filesystem::path& file) {
    return parse(read_file(file), file.string());
}

const IniSection* IniDocument::find(const std::string& name) const {
    for (const auto& s : sections) {
        if (s.name == name) {
            return &s;
        }
    }
    return nullptr;
}

std::string IniDocument::canonical() const {
    std::string out;
    for (const auto& s : sections) {
        out += "[" + s.name + "]\n";
        for (const auto& e : s.entries) {
            out += e.key + " = " + e.value + "\n";
        }
    }
    return out;
}

namespace {

/// Typed access to one section; every key must be consumed.
class SectionReader {
public:
    SectionReader(const IniDocument& doc, const IniSection& sec) : doc_(doc), sec_(sec) {}

    /// Raises on the first key that no reader asked for.
    void finish() const {
        for (const auto& e : sec_.entries) {
            if (!used_.count(e.key)) {
                throw ConfigError(where(e) + "unknown key '" + e.key + "' in section [" +
                                  sec_.name + "]");
            }
        }
    }

    const IniEntry* get(const std::string& key) {
        used_.insert(key);
        return sec_.find(key);
    }

    std::string where(const IniEntry& e) const {
        return doc_.source + ":" + std::to_string(e.line) + ": ";
    }

    [[noreturn]] void fail(const IniEntry& e, const std::string& msg) const {
        throw ConfigError(where(e) + "[" + sec_.name + "] " + e.key + ": " + msg);
    }

    double to_double(const IniEntry& e, const std::string& text) const {
        double v = 0.0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
            fail(e, "expected a number, got '" + text + "'");
        }
        return v;
    }

    void read(const std::string& key, double& out) {
        if (const auto* e = get(key)) {
            out = to_double(*e, e->value);
        }
    }
    void read_positive(const std::string& key, double& out) {
        if (const auto* e = get(key)) {
            out = to_double(*e, e->value);
            if (!(out > 0.0)) {
                fail(*e, "must be positive");
            }
        }
    }
    void read(const std::string& key, std::optional<double>& out) {
        if (const auto* e = get(key)) {
            out = to_double(*e, e->value);
        }
    }
    template <typename Int>
    void read_int(const std::string& key, Int& out, long long lo = 0) {
        if (const auto* e = get(key)) {
            long long v = 0;
            const auto& t = e->value;
            const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
            if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
                fail(*e, "expected an integer, got '" + t + "'");
            }
            if (v < lo) {
                fail(*e, "must be at least " + std::to_string(lo));
            }
            out = static_cast<Int>(v);
        }
    }
    void read_seed(const std::string& key, std::optional<std::uint64_t>& out) {
        if (const auto* e = get(key)) {
            std::uint64_t v = 0;
            const auto& t = e->value;
            const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
            if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
                fail(*e, "expected a nonnegative integer seed, got '" + t + "'");
            }
            out = v;
        }
    }
    void read(const std::string& key, bool& out) {
        if (const auto* e = get(key)) {
            const auto v = lower(e->value);
            if (v == "true" || v == "yes" || v == "1" || v == "on") {
                out = true;
            } else if (v == "false" || v == "no" || v == "0" || v == "off") {
                out = false;
            } else {
                fail(*e, "expected a boolean, got '" + e->value + "'");
            }
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const auto* e = get(key)) {
            out = e->value;
        }
    }
    std::vector<double> numbers(const IniEntry& e) const {
        std::vector<double> v;
        for (const auto& tok : split(e.value, " ,\t")) {
            v.push_back(to_double(e, tok));
        }
        return v;
    }
    void read(const std::string& key, Vec3& out) {
        if (const auto* e = get(key)) {
            const auto v = numbers(*e);
            if (v.size() != 3) {
                fail(*e, "expected three numbers");
            }
            out = Vec3(v[0], v[1], v[2]);
        }
    }
    void read(const std::string& key, std::optional<Vec3>& out) {
        if (get(key)) {
            Vec3 v;
            used_.erase(key);
            read(key, v);
            out = v;
        }
    }
    template <typename Enum>
    void read_enum(const std::string& key, Enum& out, const std::map<std::string, Enum>& names) {
        if (const auto* e = get(key)) {
            const auto it = names.find(lower(e->value));
            if (it == names.end()) {
                std::string allowed;
                for (const auto& [n, v] : names) {
                    allowed += (allowed.empty() ? "" : ", ") + n;
                }
                fail(*e, "expected one of {" + allowed + "}, got '" + e->value + "'");
            }
            out = it->second;
        }
    }
    void read_path(const std::string& key, std::filesystem::path& out,
                   const std::filesystem::path& base) {
        if (const auto* e = get(key)) {
            std::filesystem::path p(e->value);
            if (p.is_relative()) {
                p = base / p;
            }
            p = p.lexically_normal();
            if (!std::filesystem::exists(p)) {
                throw IoError(where(*e) + "file not found: " + p.string());
            }
            out = p;
        }
    }

    const IniSection& section() const { return sec_; }

private:
    const IniDocument& doc_;
    const IniSection& sec_;
    std::set<std::string> used_;
};

const std::map<std::string, HyperFamily> kFamilies{{"g", HyperFamily::Gamma},
                                                   {"gamma", HyperFamily::Gamma},
                                                   {"ig", HyperFamily::InverseGamma},
                                                   {"inverse-gamma", HyperFamily::InverseGamma}};

void parse_compartment(SectionReader& r, CompartmentEntry& c, const std::filesystem::path& base) {
    r.read_path("nodes", c.nodes, base);
    r.read_path("triangles", c.triangles, base);
    r.read_path("asc", c.asc, base);
    r.read("sphere_radius", c.sphere_radius);
    r.read("sphere_center", c.sphere_center);
    r.read_int("sphere_subdivisions", c.sphere_subdivisions, 0);
    r.read("box_lower", c.box_lower);
    r.read("box_upper", c.box_upper);
    if (const auto* e = r.get("sigma")) {
        const auto v = r.numbers(*e);
        if (v.size() == 1) {
            c.sigma = Conductivity::isotropic(v[0]);
        } else if (v.size() == 6) {
            c.sigma = Conductivity::tensor({v[0], v[1], v[2], v[3], v[4], v[5]});
        } else {
            r.fail(*e, "expected 1 or 6 values");
        }
        if (!(c.sigma.matrix().llt().info() == Eigen::Success)) {
            r.fail(*e, "conductivity must be positive definite");
        }
    }
    r.read_int("priority", c.priority, -1000000);
    r.read("active", c.active);
    r.read_positive("unit_scale", c.unit_scale);

    const int kinds = (!c.nodes.empty() || !c.triangles.empty() ? 1 : 0) + (!c.asc.empty() ? 1 : 0) +
                      (c.sphere_radius ? 1 : 0) + (c.box_lower || c.box_upper ? 1 : 0);
    if (kinds != 1) {
        throw ConfigError(r.where(IniEntry{"", "", r.section().line}) + "[" + r.section().name +
                          "] needs exactly one surface: nodes+triangles, asc, sphere_radius or "
                          "box_lower+box_upper");
    }
    if (c.nodes.empty() != c.triangles.empty()) {
        throw ConfigError(r.where(IniEntry{"", "", r.section().line}) + "[" + r.section().name +
                          "] needs both nodes and triangles");
    }
    if (c.box_lower.has_value() != c.box_upper.has_value()) {
        throw ConfigError(r.where(IniEntry{"", "", r.section().line}) + "[" + r.section().name +
                          "] needs both box_lower and box_upper");
    }
}

std::vector<Triangle> parse_triangles(SectionReader& r, const IniEntry& e) {
    std::vector<Triangle> out;
    for (const auto& group : split(e.value, ";")) {
        const auto v = split(group, " ,\t");
        if (v.size() != 3) {
            r.fail(e, "triangles are ';'-separated triples of 1-based node indices");
        }
        Triangle t{};
        for (int k = 0; k < 3; ++k) {
            const double d = r.to_double(e, v[k]);
            if (d < 1 || d != std::floor(d)) {
                r.fail(e, "node index '" + v[k] + "' is not a 1-based integer");
            }
            t[k] = static_cast<int>(d) - 1;
        }
        out.push_back(t);
    }
    return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

} // namespace

ProjectConfig ProjectConfig::parse(const IniDocument& doc, const std::filesystem::path& base_dir) {
    ProjectConfig cfg;
    cfg.base_dir = base_dir;
    cfg.canonical_text = doc.canonical();
    const auto& base = base_dir;

    for (const auto& sec : doc.sections) {
        SectionReader r(doc, sec);
        const auto& name = sec.name;
        if (name == "project") {
            r.read("name", cfg.name);
            std::optional<std::uint64_t> seed;
            r.read_seed("seed", seed);
            if (seed) {
                cfg.seed = *seed;
            }
            if (const auto* e = r.get("output")) {
                std::filesystem::path p(e->value);
                cfg.output = p.is_relative() ? base / p : p;
            }
        } else if (starts_with(name, "compartment.")) {
            CompartmentEntry c;
            c.name = name.substr(std::string("compartment.").size());
            parse_compartment(r, c, base);
            cfg.compartments.push_back(std::move(c));
        } else if (name == "mesh") {
            r.read_positive("h", cfg.mesh.h);
            r.read_int("smoothing_iterations", cfg.mesh.smoothing_iterations, 0);
            r.read("smoothing_step", cfg.mesh.smoothing_step);
        } else if (name == "electrodes") {
            ElectrodeLayoutSettings s;
            r.read_int("count", s.count, 0);
            r.read_positive("radius", s.radius);
            r.read_positive("impedance", s.impedance);
            r.read("min_z", s.min_z);
            r.read("layout_radius", s.layout_radius);
            r.read("layout_center", s.layout_center);
            cfg.electrode_layout = s;
        } else if (starts_with(name, "electrode.")) {
            ElectrodeEntry e;
            e.name = name.substr(std::string("electrode.").size());
            r.read("center", e.center);
            r.read_positive("radius", e.radius);
            r.read_positive("impedance", e.impedance);
            if (const auto* t = r.get("triangles")) {
                e.triangles = parse_triangles(r, *t);
            }
            if (e.center.has_value() == !e.triangles.empty()) {
                throw ConfigError(r.where(IniEntry{"", "", sec.line}) + "[" + name +
                                  "] needs either center (disk) or triangles");
            }
            cfg.electrodes.push_back(std::move(e));
        } else if (name == "sources") {
            r.read_int("count", cfg.sources.count, 0);
            r.read_enum("mode", cfg.sources.mode,
                        {{"cartesian", SourceMode::Cartesian},
                         {"constrained", SourceMode::Constrained},
                         {"whitney", SourceMode::Whitney}});
            r.read_seed("seed", cfg.sources.seed);
        } else if (name == "eit") {
            r.read_int("dofs", cfg.eit.dofs, 1);
            r.read_positive("amplitude", cfg.eit.amplitude);
            if (const auto* e = r.get("compartments")) {
                cfg.eit.compartments = split(e->value, " ,\t");
            }
            r.read_seed("seed", cfg.eit.seed);
        } else if (name == "forward") {
            r.read_enum("modality", cfg.forward.modality,
                        {{"eeg", Modality::Eeg}, {"eit", Modality::Eit}});
            r.read_positive("tolerance", cfg.forward.pcg.tolerance);
            r.read_int("max_iterations", cfg.forward.pcg.max_iterations, 0);
            r.read_enum("preconditioner", cfg.forward.pcg.preconditioner,
                        {{"ldp", Preconditioner::Ldp}, {"none", Preconditioner::None}});
            r.read_enum("electrode_scaling", cfg.forward.scaling,
                        {{"weak-form", ElectrodeScaling::WeakForm},
                         {"block-entries", ElectrodeScaling::BlockEntries}});
            r.read("export_system", cfg.forward.export_system);
        } else if (name == "noise") {
            r.read_enum("mode", cfg.noise.mode,
                        {{"relative", NoiseMode::Relative}, {"snr-db", NoiseMode::SnrDb}});
            r.read_positive("level", cfg.noise.level);
            r.read_seed("seed", cfg.noise.seed);
        } else if (starts_with(name, "dipole.")) {
            DipoleEntry d;
            d.name = name.substr(std::string("dipole.").size());
            r.read("position", d.dipole.position);
            r.read("orientation", d.dipole.orientation);
            r.read("moment", d.dipole.moment);
            cfg.dipoles.push_back(std::move(d));
        } else if (name == "anomaly") {
            Anomaly a;
            r.read("center", a.center);
            r.read_positive("diameter", a.diameter);
            r.read("delta", a.delta);
            cfg.anomaly = a;
        } else if (name == "inverse") {
            auto& inv = cfg.inverse;
            r.read_enum("hypermodel", inv.hyper.family, kFamilies);
            r.read_positive("beta", inv.hyper.beta);
            r.read_positive("theta0", inv.hyper.theta0);
            r.read_enum("nu_rule", inv.nu_rule, {{"max", NuRule::MaxAbs}, {"rms", NuRule::Rms}});
            r.read_positive("nu", inv.nu);
            r.read_int("iterations", inv.iterations, 1);
            r.read_enum("mode", inv.mode,
                        {{"plain", InverseMode::Plain},
                         {"roi", InverseMode::Roi},
                         {"multires", InverseMode::Multires}});
            r.read_int("subsets", inv.subsets, 1);
            r.read_int("decompositions", inv.decompositions, 1);
            r.read("roi_center", inv.roi_center);
            r.read_positive("roi_radius", inv.roi_radius);
            r.read("normalize", inv.normalize);
            r.read_seed("seed", inv.seed);
            r.read_path("leadfield", inv.leadfield, base);
            r.read_path("data", inv.data, base);
            if (const auto* e = sec.find("hypermodel")) {
                try {
                    inv.hyper.validate();
                } catch (const ParameterError& err) {
                    r.fail(*e, err.what());
                }
            }
        } else if (name == "truth") {
            TruthSettings t;
            r.read("position", t.position);
            r.read("orientation", t.orientation);
            r.read_positive("roi_radius", t.roi_radius);
            cfg.truth = t;
        } else if (name == "experiment.eeg-hypermodel") {
            auto& x = cfg.eeg_experiment;
            r.read_int("realizations", x.realizations, 1);
            r.read("deep_position", x.deep_position);
            r.read("deep_orientation", x.deep_orientation);
            r.read("superficial_position", x.superficial_position);
            r.read("superficial_orientation", x.superficial_orientation);
            r.read_positive("moment", x.moment);
            r.read_positive("noise_level", x.noise_level);
            r.read_positive("roi_radius", x.roi_radius);
            r.read_positive("nu", x.nu);
            r.read_int("iterations", x.iterations, 1);
            r.read_positive("beta", x.beta);
        } else if (name == "experiment.eit-hemorrhage") {
            auto& x = cfg.eit_experiment;
            r.read_int("subsets", x.subsets, 1);
            r.read_int("decompositions", x.decompositions, 1);
            r.read_int("iterations", x.iterations, 1);
            r.read_positive("snr_db", x.snr_db);
            r.read_positive("nu", x.nu);
            r.read_positive("theta0", x.theta0);
            r.read_enum("hypermodel", x.family, kFamilies);
            r.read_positive("beta", x.beta);
        } else {
            throw ConfigError(doc.source + ":" + std::to_string(sec.line) + ": unknown section [" +
                              name + "]");
        }
        r.finish();
    }
    return cfg;
}

ProjectConfig ProjectConfig::load(const std::filesystem::path& file) {
    if (!std::filesystem::exists(file)) {
        throw IoError("config file not found: " + file.string());
    }
    const auto abs = std::filesystem::absolute(file).lexically_normal();
    if (abs.extension() == ".json") {
        // replay from a run manifest
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(abs));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(abs.string() + ": " + e.what());
        }
        if (!j.contains("config") || !j["config"].contains("text")) {
            throw ConfigError(abs.string() + ": manifest has no embedded configuration");
        }
        const auto& c = j["config"];
        auto cfg = parse(IniDocument::parse(c["text"].get<std::string>(), abs.string()),
                         std::filesystem::path(c.value("base_dir", abs.parent_path().string())));
        cfg.seed = c.value("seed", cfg.seed);
        return cfg;
    }
    return parse(IniDocument::load(abs), abs.parent_path());
}

std::uint64_t ProjectConfig::stream_seed(std::uint64_t stream,
                                         std::optional<std::uint64_t> explicit_seed) const {
    return explicit_seed ? *explicit_seed : derive_seed(seed, stream);
}

std::string ProjectConfig::hash() const {
    return sha256_hex(canonical_text + "seed = " + std::to_string(seed) + "\n");
}

std::string ProjectConfig::model_hash() const {
    const auto doc = IniDocument::parse(canonical_text, "canonical");
    std::string text;
    for (const auto& sec : doc.sections) {
        const auto& n = sec.name;
        if (starts_with(n, "compartment.") || starts_with(n, "electrode.") || n == "mesh" ||
            n == "electrodes" || n == "sources" || n == "eit" || n == "forward") {
            text += "[" + n + "]\n";
            for (const auto& e : sec.entries) {
                text += e.key + " = " + e.value + "\n";
            }
        }
    }
    for (const auto& c : compartments) {
        for (const auto& f : {c.nodes, c.triangles, c.asc}) {
            if (!f.empty()) {
                text += f.string() + " " + sha256_file(f) + "\n";
            }
        }
    }
    return sha256_hex(text + "seed = " + std::to_string(seed) + "\n");
}

Segmentation build_segmentation(const ProjectConfig& cfg) {
    if (cfg.compartments.empty()) {
        throw ConfigError("configuration declares no [compartment.*] sections");
    }
    std::vector<Compartment> comps;
    for (const auto& c : cfg.compartments) {
        Compartment comp;
        comp.name = c.name;
        comp.sigma = c.sigma;
        comp.priority = c.priority;
        comp.active = c.active;
        if (!c.nodes.empty()) {
            comp.surfaces.push_back(load_surface_mesh(c.nodes, c.triangles, c.unit_scale, c.name));
        } else if (!c.asc.empty()) {
            comp.surfaces.push_back(load_asc_surface(c.asc, c.unit_scale, c.name));
        } else if (c.sphere_radius) {
            comp.surfaces.push_back(make_icosphere(*c.sphere_radius * c.unit_scale,
                                                   c.sphere_subdivisions,
                                                   c.sphere_center * c.unit_scale, c.name));
        } else {
            comp.surfaces.push_back(
                make_box(*c.box_lower * c.unit_scale, *c.box_upper * c.unit_scale, c.name));
        }
        comps.push_back(std::move(comp));
    }
    return Segmentation(std::move(comps));
}

ElectrodeSet build_electrodes(const ProjectConfig& cfg, const TetMesh& mesh,
                              const Segmentation& seg) {
    std::vector<ElectrodeDisk> disks;
    if (cfg.electrode_layout && cfg.electrode_layout->count > 0) {
        const auto& s = *cfg.electrode_layout;
        double radius = s.layout_radius;
        if (!(radius > 0.0)) {
            const auto& outer = seg[seg.size() - 1].surfaces.front();
            radius = 0.0;
            for (const auto& p : outer.nodes) {
                radius = std::max(radius, (p - s.layout_center).norm());
            }
        }
        for (const auto& c : spherical_cap_layout(s.count, radius, s.min_z, s.layout_center)) {
            disks.push_back({c, s.radius, s.impedance});
        }
    }
    ElectrodeSet set;
    if (!disks.empty()) {
        set = electrodes_from_disks(mesh, disks);
    }
    std::vector<ElectrodeDisk> named;
    for (const auto& e : cfg.electrodes) {
        if (e.center) {
            named.push_back({*e.center, e.radius, e.impedance});
        }
    }
    if (!named.empty()) {
        for (auto& el : electrodes_from_disks(mesh, named).electrodes) {
            set.electrodes.push_back(std::move(el));
        }
    }
    for (const auto& e : cfg.electrodes) {
        if (!e.center) {
            for (const auto& t : e.triangles) {
                for (int v : t) {
                    if (v < 0 || static_cast<std::size_t>(v) >= mesh.node_count()) {
                        throw ConfigError("electrode '" + e.name + "' references node " +
                                          std::to_string(v + 1) + " outside the mesh");
                    }
                }
            }
            set.electrodes.push_back(electrode_from_triangles(mesh, e.triangles, e.impedance));
        }
    }
    if (set.size() == 0) {
        throw ConfigError("configuration defines no electrodes");
    }
    set.validate(mesh);
    return set;
}

} // namespace headfem
