// SPDX-License-Identifier: Apache-2.0
#include "close/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "close/body_model.hpp"
#include "close/error.hpp"
#include "close/toy_humanoid.hpp"

namespace closenet {

using nlohmann::json;
using namespace classes;

std::string_view to_string(ColorScheme scheme) {
  switch (scheme) {
    case ColorScheme::Solid: return "solid";
    case ColorScheme::Striped: return "striped";
    case ColorScheme::TwoTone: return "two-tone";
  }
  return "?";
}

ColorScheme parse_color_scheme(std::string_view text) {
  if (text == "solid") return ColorScheme::Solid;
  if (text == "striped") return ColorScheme::Striped;
  if (text == "two-tone" || text == "twotone") return ColorScheme::TwoTone;
  throw ValidationError("unknown color scheme '" + std::string(text) + "' (solid|striped|two-tone)");
}

void SynthConfig::validate() const {
  if (recipe.empty()) throw ValidationError("synth recipe is empty");
  std::set<ClassId> set(recipe.begin(), recipe.end());
  for (ClassId c : set) {
    if (c >= kNumClasses) throw ValidationError("synth recipe contains an invalid class id");
  }
  if (!set.contains(Body)) throw ValidationError("synth recipe must include Body");
  const bool dress = set.contains(Dress), jumpsuit = set.contains(Jumpsuit);
  const bool separates = set.contains(Pants) || set.contains(ShortPants) || set.contains(Skirts);
  if (dress && jumpsuit) throw ValidationError("synth recipe cannot combine Dress and Jumpsuit");
  if ((dress || jumpsuit) && separates)
    throw ValidationError("synth recipe cannot combine a Dress or Jumpsuit with pants or skirts");
  if (n_points == 0) throw ValidationError("synth n_points must be positive");
}

namespace {

using toy::Part;
using toy::SurfaceSample;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

bool coin(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// Drawing order from innermost to outermost; a point takes the label of the
// outermost garment covering it.
constexpr std::array<ClassId, kNumClasses> kLayerOrder{
    Body, Undergarment, Swimsuit, Hair, Pants, ShortPants, Skirts, Shirt, TShirt,
    Jumpsuit, Dress, Vest, Hoodies, Jacket, Coat, Scarf, Hat, Shoes};

int layer_rank(ClassId c) {
  return static_cast<int>(std::find(kLayerOrder.begin(), kLayerOrder.end(), c) - kLayerOrder.begin());
}

// Per-instance extent of one garment on the canonical body.
struct Coverage {
  double torso_lo = 10.0, torso_hi = -10.0;
  double arm_end = 0.0;    // 0..1 upper arm, 1..2 forearm, 2..3 hand
  double leg_end = 0.0;    // 0..1 thigh, 1..2 shin, 2..3 foot
  double leg_start = 10.0; // shoes cover leg coordinates above this
  double neck_end = 0.0;
  double head_above = 10.0;
  bool hair = false, hood = false, scarf = false;
  double open_front = 0.0;
  double thickness = 0.0;
};

double arm_coordinate(const SurfaceSample& s) {
  switch (s.part) {
    case Part::UpperArm: return s.t;
    case Part::Forearm: return 1.0 + s.t;
    case Part::Hand: return 2.0 + s.t;
    default: return -1.0;
  }
}

double leg_coordinate(const SurfaceSample& s) {
  switch (s.part) {
    case Part::Thigh: return s.t;
    case Part::Shin: return 1.0 + s.t;
    case Part::Foot: return 2.0 + s.t;
    default: return -1.0;
  }
}

bool covers(const Coverage& c, const SurfaceSample& s) {
  const auto& p = s.position;
  switch (s.part) {
    case Part::Pelvis:
    case Part::Chest:
      if (c.scarf) return p[1] > 1.36 && std::abs(p[0]) < 0.09 && p[2] > 0.0;
      if (c.open_front > 0.0 && p[1] > 1.0 && std::abs(p[0]) < c.open_front && p[2] > 0.0) return false;
      return p[1] >= c.torso_lo && p[1] <= c.torso_hi;
    case Part::ShoulderCap:
      if (c.scarf) return std::hypot(p[0], p[2]) < 0.1;
      if (c.open_front > 0.0 && std::abs(p[0]) < c.open_front && p[2] > 0.0) return false;
      return c.torso_hi >= toy::kShoulderHeight;
    case Part::Neck: return c.scarf || s.t < c.neck_end;
    case Part::Head:
      if (c.hair) return p[1] > c.head_above || (p[1] > 1.58 && p[2] < 0.02);
      if (c.hood) return p[2] < -0.04 && p[1] < 1.68;
      return p[1] > c.head_above;
    case Part::UpperArm:
    case Part::Forearm:
    case Part::Hand: return arm_coordinate(s) < c.arm_end;
    case Part::Thigh:
    case Part::Shin:
    case Part::Foot: {
      const double a = leg_coordinate(s);
      return a < c.leg_end || a > c.leg_start;
    }
  }
  return false;
}

Coverage make_coverage(ClassId cls, bool open_front, std::mt19937_64& rng) {
  Coverage c;
  c.thickness = uniform(rng, 0.004, 0.010);
  const double top = toy::kShoulderHeight;
  switch (cls) {
    case TShirt:
      c.torso_lo = uniform(rng, 0.93, 0.99), c.torso_hi = top, c.arm_end = uniform(rng, 0.3, 0.75);
      break;
    case Shirt:
      c.torso_lo = uniform(rng, 0.90, 0.96), c.torso_hi = top;
      c.arm_end = coin(rng, 0.5) ? uniform(rng, 1.75, 1.95) : uniform(rng, 0.45, 0.8);
      c.neck_end = uniform(rng, 0.2, 0.5);
      break;
    case Vest: c.torso_lo = uniform(rng, 0.95, 1.0), c.torso_hi = top; break;
    case Hoodies:
      c.torso_lo = uniform(rng, 0.90, 0.95), c.torso_hi = top, c.arm_end = uniform(rng, 1.8, 1.97);
      c.neck_end = 1.0, c.hood = coin(rng, 0.5);
      break;
    case Jacket:
      c.torso_lo = uniform(rng, 0.92, 0.98), c.torso_hi = top, c.arm_end = uniform(rng, 1.85, 1.97);
      c.neck_end = uniform(rng, 0.2, 0.4);
      if (open_front) c.open_front = uniform(rng, 0.03, 0.06);
      c.thickness += 0.006;
      break;
    case Coat:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = top, c.leg_end = uniform(rng, 0.4, 0.7);
      c.arm_end = uniform(rng, 1.85, 1.98), c.neck_end = 0.5;
      if (open_front) c.open_front = uniform(rng, 0.03, 0.06);
      c.thickness += 0.010;
      break;
    case Scarf: c.scarf = true, c.thickness += 0.012; break;
    case Dress:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = coin(rng, 0.5) ? top : uniform(rng, 1.38, 1.43);
      c.leg_end = uniform(rng, 0.3, 0.8), c.arm_end = coin(rng, 0.5) ? 0.0 : uniform(rng, 0.2, 0.5);
      break;
    case Jumpsuit:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = top, c.leg_end = uniform(rng, 1.6, 1.9);
      c.arm_end = uniform(rng, 0.0, 0.5);
      break;
    case Skirts: c.torso_lo = toy::kTorsoBottom, c.torso_hi = uniform(rng, 1.02, 1.06), c.leg_end = uniform(rng, 0.3, 0.8); break;
    case ShortPants:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = uniform(rng, 1.03, 1.07), c.leg_end = uniform(rng, 0.35, 0.6);
      break;
    case Pants:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = uniform(rng, 1.03, 1.07), c.leg_end = uniform(rng, 1.75, 1.92);
      break;
    case Swimsuit:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = uniform(rng, 1.30, 1.38), c.leg_end = 0.05;
      c.thickness = 0.002;
      break;
    case Undergarment:
      c.torso_lo = toy::kTorsoBottom, c.torso_hi = uniform(rng, 0.96, 1.0), c.leg_end = 0.06;
      c.thickness = 0.002;
      break;
    case Shoes: c.leg_start = uniform(rng, 1.85, 1.92), c.thickness += 0.004; break;
    case Hat: c.head_above = uniform(rng, 1.65, 1.69), c.thickness += 0.006; break;
    case Hair: c.hair = true, c.head_above = uniform(rng, 1.66, 1.70); break;
    case Body: break;
  }
  return c;
}

std::array<double, 3> random_color(std::mt19937_64& rng) {
  return {uniform(rng, 0.08, 0.92), uniform(rng, 0.08, 0.92), uniform(rng, 0.08, 0.92)};
}

std::array<double, 3> skin_color(std::mt19937_64& rng) {
  static constexpr std::array<std::array<double, 3>, 4> tones{
      {{0.96, 0.80, 0.69}, {0.86, 0.67, 0.53}, {0.64, 0.45, 0.33}, {0.40, 0.27, 0.20}}};
  return tones[rng() % tones.size()];
}

std::array<double, 3> hair_color(std::mt19937_64& rng) {
  static constexpr std::array<std::array<double, 3>, 4> tones{
      {{0.10, 0.08, 0.06}, {0.35, 0.22, 0.12}, {0.75, 0.62, 0.38}, {0.55, 0.55, 0.55}}};
  return tones[rng() % tones.size()];
}

struct Paint {
  std::array<double, 3> base, second;
  ColorScheme scheme;
};

std::array<double, 3> paint(const Paint& p, const SurfaceSample& s) {
  switch (p.scheme) {
    case ColorScheme::Solid: return p.base;
    case ColorScheme::Striped: {
      const double coord = s.part == Part::UpperArm || s.part == Part::Forearm || s.part == Part::Hand
                               ? std::abs(s.position[0])
                               : s.position[1];
      return static_cast<long>(std::floor(coord / 0.04)) % 2 == 0 ? p.base : p.second;
    }
    case ColorScheme::TwoTone: return s.position[0] > 0.0 ? p.base : p.second;
  }
  return p.base;
}

BodyParams random_body(std::mt19937_64& rng, bool random_pose) {
  using namespace toy;
  BodyParams params;
  params.pose.assign(3 * NumJoints, 0.0);
  params.shape = {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
  params.translation = {uniform(rng, -0.3, 0.3), 0.0, uniform(rng, -0.3, 0.3)};
  if (!random_pose) return params;
  auto set = [&](int joint, int axis, double value) { params.pose[3 * joint + axis] = value; };
  set(Root, 1, uniform(rng, -0.6, 0.6));
  set(Neck, 1, uniform(rng, -0.2, 0.2));
  set(LShoulder, 2, uniform(rng, -1.1, 0.2));
  set(RShoulder, 2, -uniform(rng, -1.1, 0.2));
  set(LElbow, 1, uniform(rng, -0.6, 0.0));
  set(RElbow, 1, -uniform(rng, -0.6, 0.0));
  set(LHip, 0, uniform(rng, -0.3, 0.3));
  set(RHip, 0, uniform(rng, -0.3, 0.3));
  set(LKnee, 0, uniform(rng, 0.0, 0.5));
  set(RKnee, 0, uniform(rng, 0.0, 0.5));
  return params;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double to_byte_color(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

ScanSample generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(splitmix(config.seed));
  std::vector<ClassId> recipe(config.recipe.begin(), config.recipe.end());
  std::sort(recipe.begin(), recipe.end(), [](ClassId a, ClassId b) { return layer_rank(a) < layer_rank(b); });
  recipe.erase(std::unique(recipe.begin(), recipe.end()), recipe.end());

  std::vector<Coverage> coverage;
  std::vector<Paint> paints;
  for (ClassId c : recipe) {
    coverage.push_back(make_coverage(c, config.open_front, rng));
    if (c == Body) paints.push_back({skin_color(rng), {}, ColorScheme::Solid});
    else if (c == Hair) paints.push_back({hair_color(rng), {}, ColorScheme::Solid});
    else paints.push_back({random_color(rng), random_color(rng), config.scheme});
  }

  ScanSample scan;
  scan.id = config.id.empty() ? "synth-" + std::to_string(config.seed) : config.id;
  scan.body = random_body(rng, config.random_pose);
  const auto& body = *scan.body;
  const auto transforms = joint_transforms(toy_body_model(), body);
  const double sy = 1.0 + 0.05 * body.shape[0], sxz = 1.0 + 0.05 * body.shape[1];

  const auto samples = toy::sample_surface(config.n_points, rng);
  const std::size_t n = samples.size();
  scan.points.resize(n, 3);
  scan.colors.resize(n, 3);
  scan.normals.resize(n, 3);
  std::vector<ClassId> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    std::size_t top = 0;
    double offset = 0.0;
    for (std::size_t g = 1; g < recipe.size(); ++g) {
      if (!covers(coverage[g], s)) continue;
      top = g;
      offset += coverage[g].thickness;
    }
    labels[i] = recipe[top];
    auto color = paint(paints[top], s);
    for (double& v : color) v = to_byte_color(v + uniform(rng, -0.03, 0.03));

    // Shape the canonical point, push it out by the garment stack, then pose
    // it rigidly with its joint.
    std::array<double, 3> n_shaped{s.normal[0] / sxz, s.normal[1] / sy, s.normal[2] / sxz};
    const double len = std::sqrt(n_shaped[0] * n_shaped[0] + n_shaped[1] * n_shaped[1] + n_shaped[2] * n_shaped[2]);
    for (double& v : n_shaped) v /= len;
    offset += uniform(rng, -0.0015, 0.0015);
    const std::array<double, 3> p_shaped{s.position[0] * sxz + offset * n_shaped[0],
                                         s.position[1] * sy + offset * n_shaped[1],
                                         s.position[2] * sxz + offset * n_shaped[2]};
    const auto& a = transforms[static_cast<std::size_t>(s.joint)];
    std::array<double, 3> normal{};
    for (int r = 0; r < 3; ++r) {
      scan.points(i, r) = a[r * 4] * p_shaped[0] + a[r * 4 + 1] * p_shaped[1] + a[r * 4 + 2] * p_shaped[2] + a[r * 4 + 3];
      normal[r] = a[r * 4] * n_shaped[0] + a[r * 4 + 1] * n_shaped[1] + a[r * 4 + 2] * n_shaped[2];
    }
    const double nl = std::sqrt(normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]);
    for (int r = 0; r < 3; ++r) {
      scan.normals(i, r) = normal[r] / nl;
      scan.colors(i, r) = color[r];
    }
  }
  scan.labels = std::move(labels);
  scan.garments = GarmentVector::from_ids(recipe);
  scan.validate();
  return scan;
}

const std::map<std::string, std::vector<ClassId>>& recipe_templates() {
  static const std::map<std::string, std::vector<ClassId>> templates{
      {"casual", {TShirt, Pants, Shoes, Body, Hair}},
      {"shirt-shorts", {Shirt, ShortPants, Shoes, Body, Hair}},
      {"layered", {Shirt, Jacket, Pants, Shoes, Body, Hair}},
      {"hoodie", {Hoodies, Pants, Shoes, Body}},
      {"dress", {Dress, Shoes, Body, Hair}},
      {"skirt", {TShirt, Skirts, Shoes, Body, Hair}},
      {"coat", {TShirt, Coat, Scarf, Pants, Shoes, Body}},
      {"vest", {Shirt, Vest, Pants, Shoes, Body, Hair}},
      {"jumpsuit", {Jumpsuit, Shoes, Body, Hair}},
      {"swim", {Swimsuit, Body, Hair}},
      {"underwear", {Undergarment, Body, Hair}},
      {"hat", {TShirt, ShortPants, Hat, Shoes, Body}},
  };
  return templates;
}

namespace {

// Rotation used to fill splits once coverage is met.
const std::vector<std::string> kRotation{"casual", "layered", "shirt-shorts", "hoodie", "dress", "skirt",
                                         "coat",   "vest",    "jumpsuit",     "hat",    "swim",  "underwear"};

json recipe_json(const std::vector<ClassId>& recipe) {
  json out = json::array();
  for (ClassId c : recipe) out.push_back(std::string(LabelTaxonomy::standard().name(c)));
  return out;
}

}  // namespace

SynthSuite generate_suite(const SuiteConfig& config) {
  if (config.n_train == 0 || config.n_val == 0 || config.n_test == 0)
    throw ValidationError("suite split counts must be positive");
  const auto& templates = recipe_templates();
  std::vector<std::string> rotation = config.templates.empty() ? kRotation : config.templates;
  for (const auto& name : rotation) {
    if (!templates.contains(name)) throw ValidationError("unknown recipe template '" + name + "'");
  }

  // Greedy set cover of the requested classes by recipe templates.
  std::vector<std::string> required;
  std::set<ClassId> missing(config.coverage.begin(), config.coverage.end());
  while (!missing.empty()) {
    std::string best;
    std::size_t best_gain = 0;
    for (const auto& name : rotation) {
      std::size_t gain = 0;
      for (ClassId c : templates.at(name)) gain += missing.contains(c);
      if (gain > best_gain) best_gain = gain, best = name;
    }
    if (best_gain == 0) throw ValidationError("coverage requests a class no recipe can produce");
    required.push_back(best);
    for (ClassId c : templates.at(best)) missing.erase(c);
  }
  if (required.size() > config.n_train)
    throw ValidationError("coverage needs " + std::to_string(required.size()) + " training scans, only " +
                          std::to_string(config.n_train) + " requested");

  SynthSuite suite;
  suite.manifest = {{"schema", 1}, {"master_seed", config.master_seed}, {"n_points", config.n_points}};
  json coverage = json::array();
  for (ClassId c : config.coverage) coverage.push_back(std::string(LabelTaxonomy::standard().name(c)));
  suite.manifest["coverage"] = coverage;
  suite.manifest["templates"] = rotation;

  std::uint64_t index = 0;
  auto make = [&](const std::string& split, std::size_t i, const std::string& tmpl, ColorScheme scheme,
                  std::mt19937_64& pick) {
    SynthConfig sc;
    sc.seed = splitmix(config.master_seed * 0x100000001b3ULL + index++);
    sc.n_points = config.n_points;
    sc.recipe = templates.at(tmpl);
    sc.scheme = scheme;
    sc.open_front = tmpl == "layered" || (tmpl == "coat" && coin(pick, 0.5));
    sc.id = split + "-" + (i < 10 ? "0" : "") + std::to_string(i);
    ScanSample scan = generate(sc);
    suite.manifest["splits"][split].push_back({{"id", sc.id},
                                              {"seed", sc.seed},
                                              {"template", tmpl},
                                              {"scheme", std::string(to_string(scheme))},
                                              {"open_front", sc.open_front},
                                              {"recipe", recipe_json(sc.recipe)},
                                              {"file", sc.id + ".ply"}});
    return scan;
  };
  auto random_scheme = [](std::mt19937_64& pick) {
    const double u = uniform(pick, 0.0, 1.0);
    return u < 0.5 ? ColorScheme::Solid : (u < 0.75 ? ColorScheme::Striped : ColorScheme::TwoTone);
  };

  std::mt19937_64 pick(splitmix(config.master_seed ^ 0x5eedULL));
  for (std::size_t i = 0; i < config.n_train; ++i) {
    const std::string tmpl = i < required.size() ? required[i] : rotation[(i - required.size()) % rotation.size()];
    suite.train.push_back(make("train", i, tmpl, random_scheme(pick), pick));
  }
  for (std::size_t i = 0; i < config.n_val; ++i) {
    suite.val.push_back(make("val", i, rotation[(i + 3) % rotation.size()], random_scheme(pick), pick));
  }
  for (std::size_t i = 0; i < config.n_test; ++i) {
    std::string tmpl = rotation[(i + 7) % rotation.size()];
    ColorScheme scheme = random_scheme(pick);
    if (config.probes && i == 0) tmpl = "layered";
    if (config.probes && i == 1) scheme = ColorScheme::TwoTone, tmpl = "casual";
    suite.test.push_back(make("test", i, tmpl, scheme, pick));
  }
  return suite;
}

void write_suite(const SynthSuite& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto* split : {&suite.train, &suite.val, &suite.test}) {
    for (const auto& scan : *split) save_scan(scan, dir / (scan.id + ".ply"));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << suite.manifest.dump(2) << '\n';
}

LoadedSuite read_suite(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest: " + std::string(e.what()), e.byte);
  }
  if (manifest.value("schema", 0) != 1) throw ValidationError("unsupported manifest schema");
  const auto dir = manifest_path.parent_path();
  LoadedSuite out;
  auto load = [&](const char* split, std::vector<ScanSample>& target) {
    if (!manifest.contains("splits") || !manifest["splits"].contains(split)) return;
    for (const auto& entry : manifest["splits"][split]) {
      const auto file = dir / entry.at("file").get<std::string>();
      auto meta = file;
      meta.replace_extension(".json");
      target.push_back(load_scan(file, meta));
    }
  };
  load("train", out.train);
  load("val", out.val);
  load("test", out.test);
  return out;
}

}  // namespace closenet
