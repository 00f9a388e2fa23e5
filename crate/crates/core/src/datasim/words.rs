//! Fixed word lists for tags, metadata, and the text templates.

/// Instrument and timbre tags.
#[rustfmt::skip]
pub const TAGS_A: [&str; 50] = [
    "guitar", "piano", "drums", "bass", "violin", "cello", "synth", "organ", "trumpet",
    "saxophone", "flute", "harp", "banjo", "ukulele", "accordion", "clarinet", "trombone",
    "harmonica", "mandolin", "sitar", "marimba", "xylophone", "tabla", "bongos", "congas",
    "choir", "vocals", "whistle", "strings", "brass", "horns", "keyboard", "percussion",
    "beatbox", "turntables", "orchestra", "bells", "chimes", "fiddle", "tuba", "oboe",
    "bassoon", "harpsichord", "vibraphone", "glockenspiel", "kalimba", "didgeridoo",
    "bagpipes", "theremin", "handclaps",
];

/// Genre and mood tags.
#[rustfmt::skip]
pub const TAGS_B: [&str; 50] = [
    "rock", "pop", "jazz", "blues", "funk", "soul", "disco", "techno", "house", "trance",
    "ambient", "folk", "country", "reggae", "punk", "metal", "classical", "hiphop", "rap",
    "electronic", "indie", "acoustic", "upbeat", "mellow", "dreamy", "dark", "happy", "sad",
    "energetic", "chill", "romantic", "epic", "nostalgic", "aggressive", "calm", "groovy",
    "melancholic", "uplifting", "cinematic", "psychedelic", "gospel", "latin", "lofi",
    "dubstep", "grunge", "swing", "opera", "ballad", "catchy", "quirky",
];

#[rustfmt::skip]
pub const TITLE_ADJECTIVES: [&str; 20] = [
    "golden", "silent", "electric", "broken", "endless", "midnight", "velvet", "crimson",
    "hollow", "wild", "frozen", "burning", "distant", "lonely", "shining", "restless",
    "gentle", "secret", "falling", "rising",
];

#[rustfmt::skip]
pub const TITLE_NOUNS: [&str; 20] = [
    "river", "skies", "heart", "road", "city", "dreams", "ocean", "fire", "garden", "echo",
    "shadow", "summer", "light", "storm", "mirror", "horizon", "stars", "rain", "morning",
    "island",
];

#[rustfmt::skip]
pub const ARTISTS: [&str; 20] = [
    "nova", "atlas", "luna", "orion", "vega", "juniper", "marlow", "sable", "indigo", "rowan",
    "ember", "cassius", "wren", "solace", "harper", "quill", "aurora", "falcon", "lyric",
    "meridian",
];

pub const ALBUM_WORDS: [&str; 6] = ["sessions", "tales", "diaries", "letters", "chapters", "stories"];
