//! Prompt templates with `{{user}}` and `{{context}}` placeholders.

pub const USER_PLACEHOLDER: &str = "{{user}}";
pub const CONTEXT_PLACEHOLDER: &str = "{{context}}";

/// Separator placed between retrieved documents in `{{context}}`.
pub const CONTEXT_SEPARATOR: &str = "\n\n---\n\n";

/// Replaces every `{{user}}` with `user` and every `{{context}}` with the
/// contexts joined by [`CONTEXT_SEPARATOR`].
///
/// The template is scanned once, left to right, so placeholder text that
/// arrives through `user` or `contexts` is never substituted again.
pub fn assemble_prompt<S: AsRef<str>>(template: &str, user: &str, contexts: &[S]) -> String {
    let mut context = String::new();
    for (i, c) in contexts.iter().enumerate() {
        if i > 0 {
            context.push_str(CONTEXT_SEPARATOR);
        }
        context.push_str(c.as_ref());
    }

    let mut out = String::with_capacity(template.len() + user.len() + context.len());
    let mut rest = template;
    while let Some(pos) = rest.find("{{") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix(USER_PLACEHOLDER) {
            out.push_str(user);
            rest = after;
        } else if let Some(after) = tail.strip_prefix(CONTEXT_PLACEHOLDER) {
            out.push_str(&context);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}
