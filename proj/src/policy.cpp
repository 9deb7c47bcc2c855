#include "hanguard/policy.hpp"

#include <algorithm>

namespace hanguard::policy {

const DeviceRecord* Policy::find_device(MacAddress mac) const {
    auto it = devices.find(mac);
    return it == devices.end() ? nullptr : &it->second;
}

const DeviceRecord* Policy::find_device_by_ip(Ipv4Address ip) const {
    for (const auto& [mac, dev] : devices)
        if (dev.ip == ip) return &dev;
    return nullptr;
}

const PhoneRecord* Policy::find_phone(MacAddress mac) const {
    auto it = phones.find(mac);
    return it == phones.end() ? nullptr : &it->second;
}

const AppRecord* Policy::find_app(std::string_view app_id) const {
    auto it = apps.find(app_id);
    return it == apps.end() ? nullptr : &it->second;
}

const Role* Policy::find_role(std::string_view name) const {
    auto it = roles.find(name);
    return it == roles.end() ? nullptr : &it->second;
}

std::string Policy::role_of(MacAddress mac) const {
    if (const auto* phone = find_phone(mac)) return phone->role;
    return std::string(kGuestRole);
}

bool Policy::may_administer(MacAddress mac) const {
    const auto* phone = find_phone(mac);
    return phone && (phone->is_mcn || phone->role == kAdminRole);
}

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::Allow: return "Allow";
        case Decision::DenyPhoneLevel: return "DenyPhoneLevel";
        case Decision::DenyAppLevel: return "DenyAppLevel";
    }
    return "?";
}

namespace {

const DeviceRecord& require_device(const Policy& policy, MacAddress mac) {
    const auto* dev = policy.find_device(mac);
    if (!dev) throw LookupError("unknown device " + mac.to_string());
    return *dev;
}

bool intersects(const std::set<std::string>& a, const std::set<std::string>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia == *ib) return true;
        if (*ia < *ib)
            ++ia;
        else
            ++ib;
    }
    return false;
}

}  // namespace

bool te_check(const Policy& policy, std::string_view role_name, MacAddress device_mac) {
    const auto* role = policy.find_role(role_name);
    if (!role) throw LookupError("unknown role " + std::string(role_name));
    const auto& device = require_device(policy, device_mac);
    if (role->all_domains) return true;
    for (const auto& domain_name : role->domains) {
        auto it = policy.domains.find(domain_name);
        if (it != policy.domains.end() && it->second.types.contains(device.device_type))
            return true;
    }
    return false;
}

bool mcs_check(const Policy& policy, std::string_view app_id, MacAddress device_mac) {
    const auto* app = policy.find_app(app_id);
    if (!app) throw LookupError("unknown app " + std::string(app_id));
    const auto& device = require_device(policy, device_mac);
    return intersects(app->categories, device.categories);
}

Decision authorize(const Policy& policy, MacAddress phone_mac, std::string_view app_id,
                   MacAddress device_mac) {
    const auto* phone = policy.find_phone(phone_mac);
    if (!phone) throw LookupError("unknown phone " + phone_mac.to_string());
    if (!policy.find_app(app_id)) throw LookupError("unknown app " + std::string(app_id));
    if (!te_check(policy, phone->role, device_mac)) return Decision::DenyPhoneLevel;
    if (!mcs_check(policy, app_id, device_mac)) return Decision::DenyAppLevel;
    return Decision::Allow;
}

// ── Setup ────────────────────────────────────────────────────────────────────

std::string default_type_name(MacAddress mac) { return mac.compact_hex() + "_t"; }

Policy default_policy(std::span<const PhoneSpec> phones, std::span<const DeviceSpec> devices,
                      std::span<const AppRecord> apps) {
    const auto mcn_count =
        std::count_if(phones.begin(), phones.end(), [](const PhoneSpec& p) { return p.is_mcn; });
    if (mcn_count != 1)
        throw ConfigError("exactly one MCN phone required, got " + std::to_string(mcn_count));

    Policy p;
    p.version = 1;
    p.roles.emplace(kAdminRole, Role{std::string(kAdminRole), true, {}});
    p.roles.emplace(kUserRole, Role{std::string(kUserRole), false, {std::string(kHomeDomain)}});
    p.roles.emplace(kGuestRole,
                    Role{std::string(kGuestRole), false, {std::string(kUnprotectedDomain)}});
    auto& home = p.domains[std::string(kHomeDomain)];
    home.name = kHomeDomain;
    auto& open = p.domains[std::string(kUnprotectedDomain)];
    open.name = kUnprotectedDomain;

    for (const auto& spec : devices) {
        DeviceRecord rec;
        rec.mac = spec.mac;
        rec.ip = spec.ip;
        rec.device_type = spec.device_type.value_or(default_type_name(spec.mac));
        rec.is_protected = spec.is_protected;
        rec.subnet = spec.subnet;
        if (!p.devices.emplace(spec.mac, rec).second)
            throw ConfigError("duplicate device " + spec.mac.to_string());
        (rec.is_protected ? home : open).types.insert(rec.device_type);
    }
    if (home.types.empty()) throw ConfigError("no protected device to populate the Home domain");

    for (const auto& spec : phones) {
        PhoneRecord rec;
        rec.mac = spec.mac;
        rec.reserved_ip = spec.ip;
        rec.role = spec.role.value_or(std::string(spec.is_mcn ? kAdminRole : kUserRole));
        rec.user = spec.user;
        rec.credential_hash = spec.credential_hash;
        rec.cert_id = spec.cert_id;
        rec.is_mcn = spec.is_mcn;
        if (!p.phones.emplace(spec.mac, rec).second)
            throw ConfigError("duplicate phone " + spec.mac.to_string());
    }
    for (const auto& app : apps)
        if (!p.apps.emplace(app.app_id, app).second)
            throw ConfigError("duplicate app " + app.app_id);

    if (auto violations = validate_policy(p); !violations.empty())
        throw ConfigError(violations.front().record + ": " + violations.front().message);
    return p;
}

Policy bind_app_device(const Policy& policy, std::string_view app_id, MacAddress device_mac,
                       std::string_view category) {
    if (!policy.find_app(app_id)) throw LookupError("unknown app " + std::string(app_id));
    require_device(policy, device_mac);
    Policy next = policy;
    next.apps.find(app_id)->second.categories.emplace(category);
    next.devices.at(device_mac).categories.emplace(category);
    ++next.version;
    return next;
}

// ── Updates ──────────────────────────────────────────────────────────────────

namespace {

struct ChangeApplier {
    Policy& p;

    template <typename Map, typename Key>
    void erase_existing(Map& map, const Key& key, const std::string& what) {
        auto it = map.find(key);
        if (it == map.end()) throw LookupError("cannot remove unknown " + what);
        map.erase(it);
    }

    void operator()(const change::UpsertRole& c) { p.roles[c.role.name] = c.role; }
    void operator()(const change::RemoveRole& c) { erase_existing(p.roles, c.name, "role " + c.name); }
    void operator()(const change::UpsertDomain& c) { p.domains[c.domain.name] = c.domain; }
    void operator()(const change::RemoveDomain& c) {
        erase_existing(p.domains, c.name, "domain " + c.name);
    }
    void operator()(const change::UpsertDevice& c) { p.devices[c.device.mac] = c.device; }
    void operator()(const change::RemoveDevice& c) {
        erase_existing(p.devices, c.mac, "device " + c.mac.to_string());
    }
    void operator()(const change::UpsertPhone& c) { p.phones[c.phone.mac] = c.phone; }
    void operator()(const change::RemovePhone& c) {
        erase_existing(p.phones, c.mac, "phone " + c.mac.to_string());
    }
    void operator()(const change::UpsertApp& c) { p.apps[c.app.app_id] = c.app; }
    void operator()(const change::RemoveApp& c) {
        erase_existing(p.apps, c.app_id, "app " + c.app_id);
    }
    void operator()(const change::Bind& c) { p = bind_app_device(p, c.app_id, c.device, c.category); }
    void operator()(const change::UnbindApp& c) {
        auto it = p.apps.find(c.app_id);
        if (it == p.apps.end()) throw LookupError("unknown app " + c.app_id);
        it->second.categories.erase(c.category);
    }
    void operator()(const change::UnbindDevice& c) {
        auto it = p.devices.find(c.device);
        if (it == p.devices.end()) throw LookupError("unknown device " + c.device.to_string());
        it->second.categories.erase(c.category);
    }
};

}  // namespace

UpdateResult apply_update(const Policy& policy, const PolicyUpdate& update, MacAddress actor) {
    if (!policy.may_administer(actor))
        return UpdateRejection{RejectionKind::Unauthorized,
                               "actor " + actor.to_string() + " is not the MCN or an Admin"};
    if (update.changes.empty()) return UpdateRejection{RejectionKind::Invalid, "empty update"};

    Policy next = policy;
    try {
        ChangeApplier applier{next};
        for (const auto& c : update.changes) std::visit(applier, c);
    } catch (const LookupError& e) {
        return UpdateRejection{RejectionKind::Invalid, e.what()};
    }
    if (auto violations = validate_policy(next); !violations.empty())
        return UpdateRejection{RejectionKind::Invalid,
                               violations.front().record + ": " + violations.front().message};
    next.version = policy.version + 1;
    return next;
}

std::vector<Violation> validate_policy(const Policy& policy) {
    std::vector<Violation> out;
    auto flag = [&out](std::string record, std::string message) {
        out.push_back({std::move(record), std::move(message)});
    };

    for (const auto& [name, role] : policy.roles) {
        const std::string rec = "role " + name;
        if (name.empty() || role.name != name) flag(rec, "role name mismatch or empty");
        for (const auto& d : role.domains) {
            auto it = policy.domains.find(d);
            if (it == policy.domains.end())
                flag(rec, "references missing domain " + d);
            else if (it->second.types.empty() && d != kUnprotectedDomain)
                flag(rec, "references empty domain " + d);
        }
        if (name == kGuestRole && (role.all_domains || role.domains.contains(std::string(kHomeDomain))))
            flag(rec, "Guest must not reach the Home domain");
    }

    for (const auto& [name, domain] : policy.domains)
        if (name.empty() || domain.name != name) flag("domain " + name, "domain name mismatch or empty");

    std::set<std::string> typed;
    for (const auto& [name, domain] : policy.domains) typed.insert(domain.types.begin(), domain.types.end());

    std::set<Ipv4Address> device_ips;
    for (const auto& [mac, dev] : policy.devices) {
        const std::string rec = "device " + mac.to_string();
        if (dev.mac != mac) flag(rec, "key does not match record MAC");
        if (dev.device_type.empty()) flag(rec, "empty device type");
        else if (!typed.contains(dev.device_type))
            flag(rec, "type " + dev.device_type + " is in no domain (unreachable)");
        if (dev.is_protected && dev.subnet != Subnet::Iot) flag(rec, "protected device outside iot subnet");
        if (!device_ips.insert(dev.ip).second) flag(rec, "duplicate IP " + dev.ip.to_string());
    }

    int mcn_count = 0;
    std::set<Ipv4Address> phone_ips;
    for (const auto& [mac, phone] : policy.phones) {
        const std::string rec = "phone " + mac.to_string();
        if (phone.mac != mac) flag(rec, "key does not match record MAC");
        if (!policy.find_role(phone.role)) flag(rec, "unknown role " + phone.role);
        if (phone.is_mcn) ++mcn_count;
        if (!phone_ips.insert(phone.reserved_ip).second)
            flag(rec, "duplicate reserved IP " + phone.reserved_ip.to_string());
        if (device_ips.contains(phone.reserved_ip))
            flag(rec, "reserved IP collides with a device " + phone.reserved_ip.to_string());
        if (policy.devices.contains(mac)) flag(rec, "MAC also registered as a device");
    }
    if (mcn_count > 1) flag("policy", "duplicate MCN");
    if (mcn_count == 0) flag("policy", "no MCN");

    for (const auto& [id, app] : policy.apps) {
        if (id.empty() || app.app_id != id) flag("app " + id, "app id mismatch or empty");
        if (id.size() > 255) flag("app " + id, "app id longer than 255 bytes");
    }
    return out;
}

}  // namespace hanguard::policy
