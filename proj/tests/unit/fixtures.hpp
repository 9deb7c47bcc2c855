#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "hanguard/crypto.hpp"
#include "hanguard/policy.hpp"

// Small home network shared by the unit tests:
//   admin (MCN) and user phones, a wemo switch, a baby camera and an unprotected laptop,
//   the wemo app bound to the switch, an unbound app.
namespace hanguard::testing {

inline MacAddress mac_of(int hi, int lo) {
    MacAddress m;
    m.bytes = {0x02, 0x00, 0x00, 0x00, static_cast<std::uint8_t>(hi), static_cast<std::uint8_t>(lo)};
    return m;
}

inline Ipv4Address lan_ip(int host) { return Ipv4Address::from_octets(192, 168, 1, static_cast<std::uint8_t>(host)); }

inline const MacAddress kAdminPhone = mac_of(1, 0);
inline const MacAddress kUserPhone = mac_of(1, 1);
inline const MacAddress kGuestPhone = mac_of(1, 50);
inline const MacAddress kSwitch = mac_of(2, 0);
inline const MacAddress kCamera = mac_of(2, 1);
inline const MacAddress kLaptop = mac_of(3, 0);
inline const std::string kWemo = "com.belkin.wemoandroid";
inline const std::string kOther = "com.example.other";

inline Digest32 sig_of(const std::string& signer) { return sha256("signer:" + signer); }

inline policy::Policy home_policy() {
    std::vector<policy::PhoneSpec> phones{
        {kAdminPhone, lan_ip(100), "admin", credential_hash("admin", "pw-a"), "cert-admin", true, std::nullopt},
        {kUserPhone, lan_ip(101), "user", credential_hash("user", "pw-u"), "cert-user", false, std::nullopt},
    };
    std::vector<policy::DeviceSpec> devices{
        {kSwitch, lan_ip(20), std::nullopt, true, policy::Subnet::Iot},
        {kCamera, lan_ip(21), std::string("babyMonitor_t"), true, policy::Subnet::Iot},
        {kLaptop, lan_ip(50), std::nullopt, false, policy::Subnet::Phones},
    };
    std::vector<policy::AppRecord> apps{
        {kWemo, sig_of("belkin"), {}},
        {kOther, sig_of("other"), {}},
    };
    auto p = policy::default_policy(phones, devices, apps);
    return policy::bind_app_device(p, kWemo, kSwitch, "wemo");
}

// Random policy over small pools of types, categories, roles and domains.
struct RandomPolicy {
    policy::Policy policy;
    std::vector<MacAddress> phones;
    std::vector<MacAddress> devices;
    std::vector<std::string> apps;
};

inline RandomPolicy random_policy(std::mt19937_64& rng) {
    auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
    const std::vector<std::string> types{"t0", "t1", "t2", "t3", "t4", "t5"};
    const std::vector<std::string> cats{"c0", "c1", "c2", "c3"};
    auto subset = [&](const std::vector<std::string>& pool) {
        std::set<std::string> s;
        for (const auto& x : pool)
            if (pick(3) == 0) s.insert(x);
        return s;
    };

    RandomPolicy out;
    auto& p = out.policy;
    const int n_domains = 2 + pick(4);
    std::vector<std::string> domain_names;
    for (int i = 0; i < n_domains; ++i) {
        const auto name = "d" + std::to_string(i);
        domain_names.push_back(name);
        p.domains[name] = policy::DomainDef{name, subset(types)};
    }
    const int n_roles = 2 + pick(4);
    std::vector<std::string> role_names;
    for (int i = 0; i < n_roles; ++i) {
        const auto name = "r" + std::to_string(i);
        role_names.push_back(name);
        p.roles[name] = policy::Role{name, pick(8) == 0, subset(domain_names)};
    }
    const int n_devices = 2 + pick(6);
    for (int i = 0; i < n_devices; ++i) {
        const auto m = mac_of(2, i);
        p.devices[m] = policy::DeviceRecord{m, lan_ip(20 + i), types[static_cast<std::size_t>(pick(6))], subset(cats), true,
                                    policy::Subnet::Iot};
        out.devices.push_back(m);
    }
    const int n_apps = 1 + pick(4);
    for (int i = 0; i < n_apps; ++i) {
        const auto id = "app" + std::to_string(i);
        p.apps[id] = policy::AppRecord{id, {}, subset(cats)};
        out.apps.push_back(id);
    }
    const int n_phones = 1 + pick(4);
    for (int i = 0; i < n_phones; ++i) {
        const auto m = mac_of(1, i);
        policy::PhoneRecord ph;
        ph.mac = m;
        ph.reserved_ip = lan_ip(100 + i);
        ph.role = role_names[static_cast<std::size_t>(pick(n_roles))];
        p.phones[m] = ph;
        out.phones.push_back(m);
    }
    return out;
}

// Enumerates every (role, type) pair the policy grants, independently of te_check.
inline std::set<std::pair<std::string, std::string>> granted_role_types(const policy::Policy& p) {
    std::set<std::pair<std::string, std::string>> out;
    std::set<std::string> all_types;
    for (const auto& [dn, d] : p.domains) all_types.insert(d.types.begin(), d.types.end());
    for (const auto& [mac, dev] : p.devices) all_types.insert(dev.device_type);
    for (const auto& [rn, r] : p.roles)
        for (const auto& t : all_types) {
            bool ok = r.all_domains;
            for (const auto& [dn, d] : p.domains)
                for (const auto& dt : d.types)
                    if (r.domains.contains(dn) && dt == t) ok = true;
            if (ok) out.emplace(rn, t);
        }
    return out;
}

// Brute-force authorization: role/type grant first, then any shared category.
inline policy::Decision oracle(const policy::Policy& p, const std::set<std::pair<std::string, std::string>>& granted,
                               MacAddress phone, const std::string& app, MacAddress device) {
    const auto& dev = p.devices.at(device);
    if (!granted.contains({p.phones.at(phone).role, dev.device_type})) return policy::Decision::DenyPhoneLevel;
    for (const auto& a : p.apps.at(app).categories)
        for (const auto& d : dev.categories)
            if (a == d) return policy::Decision::Allow;
    return policy::Decision::DenyAppLevel;
}

}  // namespace hanguard::testing
