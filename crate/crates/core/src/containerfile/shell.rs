//! A small shell-word splitter: enough to pull simple commands out of a
//! `RUN` line. Quotes and backslashes are honored; control operators
//! (`&&`, `||`, `;`, `|`, `&`, newlines, subshell parentheses and
//! backticks) end a command.

/// Splits `line` into simple commands, each a list of unquoted words.
pub fn split_commands(line: &str) -> Vec<Vec<String>> {
    let mut commands = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut word = String::new();
    let mut in_word = false;
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;

    fn end_word(word: &mut String, in_word: &mut bool, words: &mut Vec<String>) {
        if *in_word {
            words.push(std::mem::take(word));
            *in_word = false;
        }
    }
    fn end_command(words: &mut Vec<String>, commands: &mut Vec<Vec<String>>) {
        if !words.is_empty() {
            commands.push(std::mem::take(words));
        }
    }

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\\' => {
                match chars.get(i + 1) {
                    Some('\n') => {}
                    Some(&n) => {
                        word.push(n);
                        in_word = true;
                    }
                    None => {}
                }
                i += 2;
                continue;
            }
            '\'' => {
                in_word = true;
                i += 1;
                while i < chars.len() && chars[i] != '\'' {
                    word.push(chars[i]);
                    i += 1;
                }
            }
            '"' => {
                in_word = true;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    if chars[i] == '\\' && matches!(chars.get(i + 1), Some('"' | '\\' | '$' | '`')) {
                        i += 1;
                    }
                    word.push(chars[i]);
                    i += 1;
                }
            }
            '&' if word.ends_with('>') || chars.get(i + 1) == Some(&'>') => {
                word.push(c);
                in_word = true;
            }
            ';' | '|' | '&' | '\n' | '(' | ')' | '`' => {
                end_word(&mut word, &mut in_word, &mut words);
                end_command(&mut words, &mut commands);
            }
            '#' if !in_word => {
                // Comment to end of line.
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            c if c.is_whitespace() => end_word(&mut word, &mut in_word, &mut words),
            c => {
                word.push(c);
                in_word = true;
            }
        }
        i += 1;
    }
    end_word(&mut word, &mut in_word, &mut words);
    end_command(&mut words, &mut commands);
    commands
}

/// Drops leading `VAR=value` assignments and wrappers such as `sudo`,
/// `env`, `exec` and `time`, returning the words of the real command.
pub fn strip_wrappers(words: &[String]) -> &[String] {
    let mut i = 0;
    while i < words.len() {
        let w = words[i].as_str();
        let is_assignment = w
            .split_once('=')
            .map(|(k, _)| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(false);
        let wrapper = matches!(w, "sudo" | "env" | "exec" | "time" | "nohup" | "command");
        let wrapper_flag = w.starts_with('-') && i > 0 && matches!(words[i - 1].as_str(), "sudo" | "env");
        if !(is_assignment || wrapper || wrapper_flag) {
            break;
        }
        i += 1;
    }
    &words[i..]
}

/// Final path component of a command word (`/usr/bin/curl` -> `curl`).
pub fn program_name(word: &str) -> &str {
    word.rsplit('/').next().unwrap_or(word)
}
