#include "hanguard/policy_text.hpp"

#include <sstream>

#include "hanguard/crypto.hpp"

namespace hanguard::policy {

namespace {

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string join(const std::set<std::string>& items) {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += ',';
        out += item;
    }
    return out;
}

std::string_view subnet_name(Subnet s) { return s == Subnet::Iot ? "iot" : "phones"; }

const char* bool_name(bool b) { return b ? "true" : "false"; }

}  // namespace

std::vector<RecordLine> tokenize_records(std::string_view text) {
    std::vector<RecordLine> out;
    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++number;
        if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        auto tokens = split_ws(raw);
        if (tokens.empty()) continue;

        RecordLine line;
        line.number = number;
        line.kind = tokens[0];
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const auto eq = tokens[i].find('=');
            if (eq == std::string::npos) {
                if (i != 1 || !line.name.empty())
                    throw TextFormatError(number, "expected key=value, got '" + tokens[i] + "'");
                line.name = tokens[i];
                continue;
            }
            auto key = tokens[i].substr(0, eq);
            if (key.empty()) throw TextFormatError(number, "empty key");
            if (!line.fields.emplace(key, tokens[i].substr(eq + 1)).second)
                throw TextFormatError(number, "duplicate key '" + key + "'");
        }
        out.push_back(std::move(line));
    }
    return out;
}

const std::string& FieldReader::required(std::string_view key) {
    auto it = line_.fields.find(key);
    if (it == line_.fields.end()) fail("missing key '" + std::string(key) + "'");
    used_.emplace(key);
    return it->second;
}

std::optional<std::string> FieldReader::optional(std::string_view key) {
    auto it = line_.fields.find(key);
    if (it == line_.fields.end()) return std::nullopt;
    used_.emplace(key);
    return it->second;
}

bool FieldReader::flag(std::string_view key, bool fallback) {
    auto v = optional(key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    fail("key '" + std::string(key) + "' must be true or false");
}

std::set<std::string> FieldReader::list(std::string_view key) {
    std::set<std::string> out;
    auto v = optional(key);
    if (!v) return out;
    std::size_t start = 0;
    while (start <= v->size()) {
        auto comma = v->find(',', start);
        auto item = v->substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!item.empty()) out.insert(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void FieldReader::fail(const std::string& what) const {
    throw TextFormatError(line_.number, line_.kind + ": " + what);
}

void FieldReader::finish() const {
    for (const auto& [key, value] : line_.fields)
        if (!used_.contains(key)) fail("unknown key '" + key + "'");
}

namespace {

template <typename T>
T guarded(const FieldReader& r, auto&& fn) {
    try {
        return fn();
    } catch (const TextFormatError&) {
        throw;
    } catch (const ParseError& e) {
        r.fail(e.what());
    }
}

Role read_role(const RecordLine& line) {
    FieldReader r(line);
    if (line.name.empty()) r.fail("missing role name");
    Role role;
    role.name = line.name;
    auto domains = r.list("domains");
    if (domains.contains("*")) {
        if (domains.size() != 1) r.fail("'*' cannot be combined with named domains");
        role.all_domains = true;
    } else {
        role.domains = std::move(domains);
    }
    r.finish();
    return role;
}

DomainDef read_domain(const RecordLine& line) {
    FieldReader r(line);
    if (line.name.empty()) r.fail("missing domain name");
    DomainDef d{line.name, r.list("types")};
    r.finish();
    return d;
}

Subnet read_subnet(FieldReader& r, Subnet fallback) {
    auto v = r.optional("subnet");
    if (!v) return fallback;
    if (*v == "iot") return Subnet::Iot;
    if (*v == "phones") return Subnet::Phones;
    r.fail("subnet must be iot or phones");
}

DeviceRecord read_device(const RecordLine& line) {
    FieldReader r(line);
    if (!line.name.empty()) r.fail("unexpected positional token '" + line.name + "'");
    DeviceRecord d;
    d.mac = guarded<MacAddress>(r, [&] { return MacAddress::parse(r.required("mac")); });
    d.ip = guarded<Ipv4Address>(r, [&] { return Ipv4Address::parse(r.required("ip")); });
    d.device_type = r.required("type");
    d.categories = r.list("categories");
    d.is_protected = r.flag("protected", true);
    d.subnet = read_subnet(r, Subnet::Iot);
    r.finish();
    return d;
}

PhoneRecord read_phone(const RecordLine& line) {
    FieldReader r(line);
    if (!line.name.empty()) r.fail("unexpected positional token '" + line.name + "'");
    PhoneRecord p;
    p.mac = guarded<MacAddress>(r, [&] { return MacAddress::parse(r.required("mac")); });
    p.reserved_ip = guarded<Ipv4Address>(r, [&] { return Ipv4Address::parse(r.required("ip")); });
    p.role = r.required("role");
    p.user = r.required("user");
    p.credential_hash = guarded<Digest32>(r, [&] { return digest_from_hex(r.required("cred")); });
    p.cert_id = r.required("cert");
    p.is_mcn = r.flag("mcn", false);
    r.finish();
    return p;
}

AppRecord read_app(const RecordLine& line) {
    FieldReader r(line);
    if (!line.name.empty()) r.fail("unexpected positional token '" + line.name + "'");
    AppRecord a;
    a.app_id = r.required("id");
    a.signature = guarded<Digest32>(r, [&] { return digest_from_hex(r.required("sig")); });
    a.categories = r.list("categories");
    r.finish();
    return a;
}

MacAddress read_mac(FieldReader& r, std::string_view key) {
    return guarded<MacAddress>(r, [&] { return MacAddress::parse(r.required(key)); });
}

std::string format_role(const Role& role) {
    return "role " + role.name + " domains=" + (role.all_domains ? "*" : join(role.domains));
}

std::string format_domain(const DomainDef& d) { return "domain " + d.name + " types=" + join(d.types); }

std::string format_device(const DeviceRecord& d) {
    return "device mac=" + d.mac.to_string() + " ip=" + d.ip.to_string() + " type=" + d.device_type +
           " categories=" + join(d.categories) + " protected=" + bool_name(d.is_protected) +
           " subnet=" + std::string(subnet_name(d.subnet));
}

std::string format_phone(const PhoneRecord& p) {
    return "phone mac=" + p.mac.to_string() + " ip=" + p.reserved_ip.to_string() + " role=" + p.role +
           " user=" + p.user + " cred=" + to_hex(p.credential_hash) + " cert=" + p.cert_id +
           " mcn=" + bool_name(p.is_mcn);
}

std::string format_app(const AppRecord& a) {
    return "app id=" + a.app_id + " sig=" + to_hex(a.signature) + " categories=" + join(a.categories);
}

}  // namespace

Policy parse_policy(std::string_view text) {
    Policy p;
    bool saw_header = false;
    for (const auto& line : tokenize_records(text)) {
        if (line.kind == "policy") {
            FieldReader r(line);
            if (saw_header) r.fail("duplicate policy header");
            saw_header = true;
            const auto& v = r.required("version");
            try {
                std::size_t used = 0;
                p.version = std::stoull(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
            } catch (const std::exception&) {
                r.fail("bad version '" + v + "'");
            }
            r.finish();
        } else if (line.kind == "role") {
            auto role = read_role(line);
            if (!p.roles.emplace(role.name, role).second)
                throw TextFormatError(line.number, "duplicate role " + role.name);
        } else if (line.kind == "domain") {
            auto d = read_domain(line);
            if (!p.domains.emplace(d.name, d).second)
                throw TextFormatError(line.number, "duplicate domain " + d.name);
        } else if (line.kind == "device") {
            auto d = read_device(line);
            if (!p.devices.emplace(d.mac, d).second)
                throw TextFormatError(line.number, "duplicate device " + d.mac.to_string());
        } else if (line.kind == "phone") {
            auto ph = read_phone(line);
            if (!p.phones.emplace(ph.mac, ph).second)
                throw TextFormatError(line.number, "duplicate phone " + ph.mac.to_string());
        } else if (line.kind == "app") {
            auto a = read_app(line);
            if (!p.apps.emplace(a.app_id, a).second)
                throw TextFormatError(line.number, "duplicate app " + a.app_id);
        } else {
            throw TextFormatError(line.number, "unknown record kind '" + line.kind + "'");
        }
    }
    if (!saw_header) throw TextFormatError(1, "missing 'policy version=N' header");
    return p;
}

std::string format_policy(const Policy& policy) {
    std::ostringstream out;
    out << "policy version=" << policy.version << '\n';
    for (const auto& [_, role] : policy.roles) out << format_role(role) << '\n';
    for (const auto& [_, d] : policy.domains) out << format_domain(d) << '\n';
    for (const auto& [_, d] : policy.devices) out << format_device(d) << '\n';
    for (const auto& [_, p] : policy.phones) out << format_phone(p) << '\n';
    for (const auto& [_, a] : policy.apps) out << format_app(a) << '\n';
    return out.str();
}

PolicyUpdate parse_update(std::string_view text) {
    PolicyUpdate update;
    for (const auto& line : tokenize_records(text)) {
        FieldReader r(line);
        const auto& k = line.kind;
        if (k == "role") {
            update.changes.emplace_back(change::UpsertRole{read_role(line)});
        } else if (k == "domain") {
            update.changes.emplace_back(change::UpsertDomain{read_domain(line)});
        } else if (k == "device") {
            update.changes.emplace_back(change::UpsertDevice{read_device(line)});
        } else if (k == "phone") {
            update.changes.emplace_back(change::UpsertPhone{read_phone(line)});
        } else if (k == "app") {
            update.changes.emplace_back(change::UpsertApp{read_app(line)});
        } else if (k == "remove-role") {
            update.changes.emplace_back(change::RemoveRole{r.required("name")});
            r.finish();
        } else if (k == "remove-domain") {
            update.changes.emplace_back(change::RemoveDomain{r.required("name")});
            r.finish();
        } else if (k == "remove-device") {
            update.changes.emplace_back(change::RemoveDevice{read_mac(r, "mac")});
            r.finish();
        } else if (k == "remove-phone") {
            update.changes.emplace_back(change::RemovePhone{read_mac(r, "mac")});
            r.finish();
        } else if (k == "remove-app") {
            update.changes.emplace_back(change::RemoveApp{r.required("id")});
            r.finish();
        } else if (k == "bind") {
            change::Bind b;
            b.app_id = r.required("app");
            b.device = read_mac(r, "device");
            b.category = r.required("category");
            r.finish();
            update.changes.emplace_back(std::move(b));
        } else if (k == "unbind-app") {
            change::UnbindApp u{r.required("id"), r.required("category")};
            r.finish();
            update.changes.emplace_back(std::move(u));
        } else if (k == "unbind-device") {
            change::UnbindDevice u{read_mac(r, "mac"), r.required("category")};
            r.finish();
            update.changes.emplace_back(std::move(u));
        } else {
            throw TextFormatError(line.number, "unknown update record '" + k + "'");
        }
    }
    return update;
}

namespace {

struct ChangeFormatter {
    std::string operator()(const change::UpsertRole& c) const { return format_role(c.role); }
    std::string operator()(const change::RemoveRole& c) const { return "remove-role name=" + c.name; }
    std::string operator()(const change::UpsertDomain& c) const { return format_domain(c.domain); }
    std::string operator()(const change::RemoveDomain& c) const {
        return "remove-domain name=" + c.name;
    }
    std::string operator()(const change::UpsertDevice& c) const { return format_device(c.device); }
    std::string operator()(const change::RemoveDevice& c) const {
        return "remove-device mac=" + c.mac.to_string();
    }
    std::string operator()(const change::UpsertPhone& c) const { return format_phone(c.phone); }
    std::string operator()(const change::RemovePhone& c) const {
        return "remove-phone mac=" + c.mac.to_string();
    }
    std::string operator()(const change::UpsertApp& c) const { return format_app(c.app); }
    std::string operator()(const change::RemoveApp& c) const { return "remove-app id=" + c.app_id; }
    std::string operator()(const change::Bind& c) const {
        return "bind app=" + c.app_id + " device=" + c.device.to_string() + " category=" + c.category;
    }
    std::string operator()(const change::UnbindApp& c) const {
        return "unbind-app id=" + c.app_id + " category=" + c.category;
    }
    std::string operator()(const change::UnbindDevice& c) const {
        return "unbind-device mac=" + c.device.to_string() + " category=" + c.category;
    }
};

}  // namespace

std::string format_update(const PolicyUpdate& update) {
    std::string out;
    for (const auto& c : update.changes) out += std::visit(ChangeFormatter{}, c) + "\n";
    return out;
}

Topology parse_topology(std::string_view text) {
    Topology topo;
    for (const auto& line : tokenize_records(text)) {
        FieldReader r(line);
        if (!line.name.empty()) r.fail("unexpected positional token '" + line.name + "'");
        if (line.kind == "phone") {
            PhoneSpec p;
            p.mac = read_mac(r, "mac");
            p.ip = guarded<Ipv4Address>(r, [&] { return Ipv4Address::parse(r.required("ip")); });
            p.user = r.required("user");
            auto cred = r.optional("cred");
            auto password = r.optional("password");
            if (cred.has_value() == password.has_value())
                r.fail("exactly one of 'cred' or 'password' is required");
            p.credential_hash = cred ? guarded<Digest32>(r, [&] { return digest_from_hex(*cred); })
                                     : credential_hash(p.user, *password);
            p.cert_id = r.required("cert");
            p.is_mcn = r.flag("mcn", false);
            p.role = r.optional("role");
            topo.phones.push_back(std::move(p));
        } else if (line.kind == "device") {
            DeviceSpec d;
            d.mac = read_mac(r, "mac");
            d.ip = guarded<Ipv4Address>(r, [&] { return Ipv4Address::parse(r.required("ip")); });
            d.device_type = r.optional("type");
            d.is_protected = r.flag("protected", true);
            d.subnet = read_subnet(r, d.is_protected ? Subnet::Iot : Subnet::Phones);
            topo.devices.push_back(std::move(d));
        } else if (line.kind == "app") {
            AppRecord a;
            a.app_id = r.required("id");
            a.signature = guarded<Digest32>(r, [&] { return digest_from_hex(r.required("sig")); });
            a.categories = r.list("categories");
            topo.apps.push_back(std::move(a));
        } else {
            throw TextFormatError(line.number, "unknown topology record '" + line.kind + "'");
        }
        r.finish();
    }
    return topo;
}

}  // namespace hanguard::policy
