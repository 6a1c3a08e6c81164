package com.acme.legacy;

import java.util.List;
import java.util.Properties;

import org.springframework.security.crypto.bcrypt.BCryptPasswordEncoder;

public class MigrationJob {

    private final BCryptPasswordEncoder encoder = new BCryptPasswordEncoder();

    public int migrate(List<Properties> rows) {
        int migrated = 0;
        for (Properties row : rows) {
            row.setProperty("pwd_hash", rehash(row.getProperty("pwd")));
            migrated++;
        }
        return migrated;
    }

    private String rehash(String plainPassword) {
        return encoder.encode(plainPassword);
    }
}
