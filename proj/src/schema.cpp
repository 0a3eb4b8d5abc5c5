#include "sidkit/schema.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sidkit {

using nlohmann::json;

namespace {
const char* kRoleNames[kNumGroups] = {"head", "upper_body", "lower_body",
                                      "identity", "carrying"};
}

const char* role_name(GroupRole role) { return kRoleNames[static_cast<int>(role)]; }

std::optional<GroupRole> role_from_name(const std::string& name) {
  for (int i = 0; i < kNumGroups; ++i)
    if (name == kRoleNames[i]) return static_cast<GroupRole>(i);
  return std::nullopt;
}

int AttributeDef::label_index(const std::string& label) const {
  for (int i = 0; i < label_count(); ++i)
    if (labels[static_cast<size_t>(i)] == label) return i;
  throw Error("unknown label '" + label + "' for attribute '" + name + "'");
}

long AttributeGroup::sid_count() const {
  long n = 1;
  for (const auto& a : attributes) n *= a.label_count();
  return n;
}

int AttributeGroup::vector_length() const {
  int n = 0;
  for (const auto& a : attributes) n += a.vector_width();
  return n;
}

const AttributeDef& AttributeGroup::attribute(const std::string& name) const {
  for (const auto& a : attributes)
    if (a.name == name) return a;
  throw Error("group '" + std::string(role_name(role)) + "' has no attribute '" + name + "'");
}

AttributeSchema AttributeSchema::parse(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("schema document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("groups") || !doc["groups"].is_array())
    throw Error("schema document must be an object with a 'groups' array");

  AttributeSchema schema;
  schema.version_ = doc.value("version", std::string("unversioned"));

  std::set<std::string> seen_roles;
  std::set<std::string> seen_attr_names;  // attribute names are global: one group each
  for (const auto& jgroup : doc["groups"]) {
    if (!jgroup.is_object() || !jgroup.contains("role") || !jgroup.contains("attributes"))
      throw Error("each group needs 'role' and 'attributes'");
    const std::string role_str = jgroup["role"].get<std::string>();
    auto role = role_from_name(role_str);
    if (!role)
      throw Error("unknown group role '" + role_str +
                  "' (expected head|upper_body|lower_body|identity|carrying)");
    if (!seen_roles.insert(role_str).second)
      throw Error("group role '" + role_str + "' appears twice");

    AttributeGroup group;
    group.role = *role;
    if (!jgroup["attributes"].is_array() || jgroup["attributes"].empty())
      throw Error("group '" + role_str + "' must list at least one attribute");
    for (const auto& jattr : jgroup["attributes"]) {
      AttributeDef attr;
      attr.name = jattr.at("name").get<std::string>();
      if (attr.name.empty()) throw Error("attribute with empty name in group '" + role_str + "'");
      if (!seen_attr_names.insert(attr.name).second)
        throw Error("attribute '" + attr.name + "' assigned to more than one group");
      const std::string kind = jattr.value("kind", std::string("categorical"));
      if (kind == "binary")
        attr.kind = AttrKind::kBinary;
      else if (kind == "categorical")
        attr.kind = AttrKind::kCategorical;
      else
        throw Error("attribute '" + attr.name + "': unknown kind '" + kind + "'");
      if (!jattr.contains("labels") || !jattr["labels"].is_array())
        throw Error("attribute '" + attr.name + "' needs a 'labels' array");
      std::set<std::string> seen_labels;
      for (const auto& jlabel : jattr["labels"]) {
        const std::string label = jlabel.get<std::string>();
        if (!seen_labels.insert(label).second)
          throw Error("attribute '" + attr.name + "' lists label '" + label + "' twice");
        attr.labels.push_back(label);
      }
      if (attr.label_count() < 2)
        throw Error("attribute '" + attr.name + "' needs at least two labels");
      if (attr.kind == AttrKind::kBinary && attr.label_count() != 2)
        throw Error("binary attribute '" + attr.name + "' must have exactly two labels");
      group.attributes.push_back(std::move(attr));
    }
    schema.groups_.push_back(std::move(group));
  }
  if (static_cast<int>(schema.groups_.size()) != kNumGroups) {
    std::string missing;
    for (const char* r : kRoleNames)
      if (!seen_roles.count(r)) missing += std::string(missing.empty() ? "" : ", ") + r;
    throw Error("schema must define all five group roles; missing: " + missing);
  }
  return schema;
}

AttributeSchema AttributeSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open schema file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const AttributeGroup& AttributeSchema::group(GroupRole role) const {
  for (const auto& g : groups_)
    if (g.role == role) return g;
  throw Error("schema lacks group");  // unreachable on validated schemas
}

std::string AttributeSchema::to_json() const {
  json doc;
  doc["version"] = version_;
  doc["groups"] = json::array();
  for (const auto& g : groups_) {
    json jg;
    jg["role"] = role_name(g.role);
    jg["attributes"] = json::array();
    for (const auto& a : g.attributes) {
      json ja;
      ja["name"] = a.name;
      ja["kind"] = a.kind == AttrKind::kBinary ? "binary" : "categorical";
      ja["labels"] = a.labels;
      jg["attributes"].push_back(std::move(ja));
    }
    doc["groups"].push_back(std::move(jg));
  }
  return doc.dump(2);
}

uint64_t AttributeSchema::hash() const {
  // FNV-1a over a canonical rendering; insensitive to JSON whitespace choices
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0x1f;  // field separator
    h *= 1099511628211ull;
  };
  mix(version_);
  for (const auto& g : groups_) {
    mix(role_name(g.role));
    for (const auto& a : g.attributes) {
      mix(a.name);
      mix(a.kind == AttrKind::kBinary ? "b" : "c");
      for (const auto& l : a.labels) mix(l);
    }
  }
  return h;
}

long AttributeSchema::total_sid_count() const {
  long n = 0;
  for (const auto& g : groups_) n += g.sid_count();
  return n;
}

std::vector<SemanticId> enumerate_sids(const AttributeGroup& group) {
  const long count = group.sid_count();
  std::vector<SemanticId> out;
  out.reserve(static_cast<size_t>(count));
  for (long idx = 0; idx < count; ++idx) out.push_back(sid_from_index(group, idx));
  return out;
}

SemanticId sid_from_index(const AttributeGroup& group, long index) {
  if (index < 0 || index >= group.sid_count())
    throw Error("SID index out of range for group '" + std::string(role_name(group.role)) + "'");
  SemanticId sid;
  sid.group = group.role;
  sid.index = static_cast<int>(index);
  sid.label_choice.assign(group.attributes.size(), 0);
  // peel digits least-significant (= last attribute) first
  long rest = index;
  for (int a = group.attribute_count() - 1; a >= 0; --a) {
    const long k = group.attributes[static_cast<size_t>(a)].label_count();
    sid.label_choice[static_cast<size_t>(a)] = static_cast<int>(rest % k);
    rest /= k;
  }
  return sid;
}

SemanticId sid_of(const AttributeGroup& group,
                  const std::map<std::string, std::string>& labels) {
  SemanticId sid;
  sid.group = group.role;
  long index = 0;
  size_t used = 0;
  for (const auto& attr : group.attributes) {
    auto it = labels.find(attr.name);
    if (it == labels.end())
      throw Error("missing label for attribute '" + attr.name + "'");
    const int digit = attr.label_index(it->second);
    sid.label_choice.push_back(digit);
    index = index * attr.label_count() + digit;
    ++used;
  }
  if (used != labels.size())
    for (const auto& [name, value] : labels) {
      (void)value;
      bool known = false;
      for (const auto& attr : group.attributes) known |= (attr.name == name);
      if (!known)
        throw Error("label for unknown attribute '" + name + "' in group '" +
                    std::string(role_name(group.role)) + "'");
    }
  sid.index = static_cast<int>(index);
  return sid;
}

std::vector<double> attribute_vector(const AttributeGroup& group, const SemanticId& sid) {
  if (sid.label_choice.size() != group.attributes.size())
    throw Error("SID label_choice does not match group arity");
  std::vector<double> v(static_cast<size_t>(group.vector_length()), 0.0);
  size_t offset = 0;
  for (size_t a = 0; a < group.attributes.size(); ++a) {
    const auto& attr = group.attributes[a];
    const int digit = sid.label_choice[a];
    if (digit < 0 || digit >= attr.label_count())
      throw Error("label index out of range for attribute '" + attr.name + "'");
    if (attr.kind == AttrKind::kBinary)
      v[offset] = static_cast<double>(digit);
    else
      v[offset + static_cast<size_t>(digit)] = 1.0;
    offset += static_cast<size_t>(attr.vector_width());
  }
  return v;
}

}  // namespace sidkit
