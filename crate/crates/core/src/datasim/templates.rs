//! Prompt and reasoning templates.
//!
//! Slots: `{desired}` and `{undesired}` take tag lists joined with "and",
//! `{artist}` and `{title}` take target metadata, `{t1}`..`{t3}` take
//! individual target tags.

pub const CONTRAST_TEMPLATES: [&str; 12] = [
    "less {undesired} and more {desired} please",
    "can you make it more {desired} and drop the {undesired}",
    "i want something {desired} , not so {undesired}",
    "too much {undesired} , give me {desired} instead",
    "try a track with {desired} but without {undesired}",
    "i prefer {desired} over {undesired}",
    "this is too {undesired} , i need more {desired}",
    "swap the {undesired} for {desired}",
    "nice but i would like {desired} rather than {undesired}",
    "looking for {desired} vibes , no {undesired}",
    "could it be more {desired} and less {undesired}",
    "keep it {desired} and lose the {undesired}",
];

pub const DESIRED_TEMPLATES: [&str; 4] = [
    "make it more {desired}",
    "i want more {desired} in it",
    "add some {desired} please",
    "something with {desired} would fit better",
];

pub const ARTIST_TEMPLATES: [&str; 2] = [
    "something {desired} like {artist} , less {undesired}",
    "i want a {desired} song similar to {artist} , not {undesired}",
];

/// Used when candidate and target share every tag and the target has a
/// title. Without a title the `DESIRED_TEMPLATES` are used instead.
pub const FALLBACK_TITLE_TEMPLATES: [&str; 1] = ["not this one , maybe {title} , still {desired}"];

pub const REASONING_WITH_TITLE: [&str; 3] = [
    "{title} is recommended because it features {t1} and {t2} with a {t3} feel .",
    "i suggest {title} , a {t3} track built on {t1} and {t2} .",
    "{title} fits this video with its {t1} , {t2} and {t3} mood .",
];

pub const REASONING_PLAIN: [&str; 3] = [
    "this track is recommended because it features {t1} and {t2} with a {t3} feel .",
    "i suggest this {t3} track built on {t1} and {t2} .",
    "this song fits the video with its {t1} , {t2} and {t3} mood .",
];

pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

pub fn join_tags(tags: &[String]) -> String {
    tags.join(" and ")
}
