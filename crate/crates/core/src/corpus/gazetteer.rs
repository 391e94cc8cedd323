use super::Gender;

pub const FEMALE_NAMES: [&str; 20] = [
    "Hannah", "Amanda", "Betty", "Anna", "Emma", "Olivia", "Sophia", "Mia", "Chloe", "Grace",
    "Lily", "Ruby", "Ella", "Julia", "Laura", "Rachel", "Nora", "Alice", "Kate", "Megan",
];

pub const MALE_NAMES: [&str; 20] = [
    "Larry", "John", "Peter", "Adam", "Tom", "Jack", "Harry", "Oliver", "Leo", "Sam", "Ethan",
    "Ryan", "Daniel", "Mark", "Paul", "Greg", "Victor", "Simon", "Luke", "Oscar",
];

/// Gender of a gazetteer name; `None` for names outside the list.
pub fn gazetteer_gender(name: &str) -> Option<Gender> {
    if FEMALE_NAMES.contains(&name) {
        Some(Gender::Female)
    } else if MALE_NAMES.contains(&name) {
        Some(Gender::Male)
    } else {
        None
    }
}
