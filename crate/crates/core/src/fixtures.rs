//! A small Spider-shaped corpus: five SQLite databases, their `tables.json`,
//! and train/dev splits with gold SQL covering all four problem groups.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::{json, Value};

use crate::corpus::{write_examples, DatasetFormat, Difficulty, QueryExample};

const CONCERT_SINGER: &str = r#"
CREATE TABLE stadium (Stadium_ID INTEGER PRIMARY KEY, Location TEXT, Name TEXT, Capacity INTEGER, Highest INTEGER, Lowest INTEGER, Average INTEGER);
CREATE TABLE singer (Singer_ID INTEGER PRIMARY KEY, Name TEXT, Country TEXT, Song_Name TEXT, Song_release_year TEXT, Age INTEGER, Is_male TEXT);
CREATE TABLE concert (concert_ID INTEGER PRIMARY KEY, concert_Name TEXT, Theme TEXT, Stadium_ID INTEGER REFERENCES stadium(Stadium_ID), Year TEXT);
CREATE TABLE singer_in_concert (concert_ID INTEGER REFERENCES concert(concert_ID), Singer_ID INTEGER REFERENCES singer(Singer_ID), PRIMARY KEY (concert_ID, Singer_ID));
INSERT INTO stadium VALUES
 (1, 'Raith Rovers', 'Stark''s Park', 10104, 4812, 1294, 2106),
 (2, 'Ayr United', 'Somerset Park', 11998, 2363, 1057, 1477),
 (3, 'East Fife', 'Bayview Stadium', 2000, 1980, 533, 864),
 (4, 'Queen''s Park', 'Hampden Park', 52500, 1763, 466, 730),
 (5, 'Stirling Albion', 'Forthbank Stadium', 3808, 1125, 404, 642);
INSERT INTO singer VALUES
 (1, 'Joe Sharp', 'Netherlands', 'You', '1992', 52, 'F'),
 (2, 'Timbaland', 'United States', 'Dangerous', '2008', 32, 'T'),
 (3, 'Justin Brown', 'France', 'Hey Oh', '2013', 29, 'T'),
 (4, 'Rose White', 'France', 'Sun', '2003', 41, 'F'),
 (5, 'John Nizinik', 'France', 'Gentleman', '2014', 43, 'T'),
 (6, 'Tribal King', 'France', 'Love', '2016', 25, 'T');
INSERT INTO concert VALUES
 (1, 'Auditions', 'Free choice', 1, '2014'),
 (2, 'Super bootcamp', 'Free choice 2', 2, '2014'),
 (3, 'Home Visits', 'Bleeding Love', 2, '2015'),
 (4, 'Week 1', 'Wide Awake', 4, '2014'),
 (5, 'Week 1', 'Happy Tonight', 4, '2015'),
 (6, 'Week 2', 'Party All Night', 5, '2014');
INSERT INTO singer_in_concert VALUES (1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 5), (4, 4), (5, 6), (5, 3), (6, 2);
"#;

const DEPARTMENT_MANAGEMENT: &str = r#"
CREATE TABLE department (Department_ID INTEGER PRIMARY KEY, Name TEXT, Creation TEXT, Ranking INTEGER, Budget_in_Billions REAL, Num_Employees REAL);
CREATE TABLE head (head_ID INTEGER PRIMARY KEY, name TEXT, born_state TEXT, age REAL);
CREATE TABLE management (department_ID INTEGER REFERENCES department(Department_ID), head_ID INTEGER REFERENCES head(head_ID), temporary_acting TEXT, PRIMARY KEY (department_ID, head_ID));
INSERT INTO department VALUES
 (1, 'State', '1789', 1, 9.96, 30266),
 (2, 'Treasury', '1789', 2, 11.1, 115897),
 (3, 'Defense', '1947', 3, 439.3, 3000000),
 (4, 'Justice', '1870', 4, 23.4, 112557),
 (5, 'Interior', '1849', 5, 10.7, 71436),
 (6, 'Agriculture', '1889', 6, 77.6, 109832),
 (7, 'Commerce', '1903', 7, 6.2, 36000);
INSERT INTO head VALUES
 (1, 'Tiger Woods', 'Alabama', 67),
 (2, 'Sergio García', 'California', 68),
 (3, 'K. J. Choi', 'Alabama', 69),
 (4, 'Dudley Hart', 'California', 52),
 (5, 'Jeff Maggert', 'Delaware', 53),
 (6, 'Billy Mayfair', 'California', 70),
 (7, 'Stewart Cink', 'Florida', 50),
 (8, 'Nick Faldo', 'California', 56);
INSERT INTO management VALUES (2, 5, 'Yes'), (7, 3, 'No'), (2, 6, 'Yes'), (3, 4, 'No'), (6, 7, 'Yes');
"#;

const GYMNAST: &str = r#"
CREATE TABLE people (People_ID INTEGER PRIMARY KEY, Name TEXT, Age REAL, Height REAL, Hometown TEXT);
CREATE TABLE gymnast (Gymnast_ID INTEGER PRIMARY KEY REFERENCES people(People_ID), Floor_Exercise_Points REAL, Pommel_Horse_Points REAL, Rings_Points REAL, Vault_Points REAL, Parallel_Bars_Points REAL, Horizontal_Bar_Points REAL, Total_Points REAL);
INSERT INTO people VALUES
 (1, 'Paul Hamm', 24, 1.71, 'Santo Domingo'),
 (2, 'Lorraine Súarez Carmona', 21, 1.75, 'Bonao'),
 (3, 'Ashley Pérez Cabrera', 19, 1.70, 'Miami'),
 (4, 'Elizabeth Quiñónez Aroyo', 20, 1.73, 'Santo Domingo'),
 (5, 'Eve Ricardo', 19, 1.76, 'Santiago de los Caballeros'),
 (6, 'Nadia Caba Rodríguez', 22, 1.79, 'Santo Domingo'),
 (7, 'Clara Rincón', 21, 1.72, 'Bonao'),
 (8, 'Juan Marte', 23, 1.80, 'Miami');
INSERT INTO gymnast VALUES
 (1, 9.725, 9.737, 9.512, 9.575, 9.762, 9.750, 58.061),
 (2, 9.700, 9.625, 9.625, 9.650, 9.587, 9.737, 57.924),
 (4, 9.412, 9.850, 9.487, 9.137, 9.700, 9.475, 57.061),
 (6, 9.062, 9.650, 9.487, 9.337, 9.350, 9.412, 56.298),
 (7, 9.100, 9.725, 9.575, 9.112, 9.275, 9.500, 56.287),
 (8, 9.637, 9.712, 9.300, 9.450, 9.487, 9.437, 57.023);
"#;

const FLIGHT_1: &str = r#"
CREATE TABLE aircraft (aid INTEGER PRIMARY KEY, name TEXT, distance INTEGER);
CREATE TABLE employee (eid INTEGER PRIMARY KEY, name TEXT, salary INTEGER);
CREATE TABLE certificate (eid INTEGER REFERENCES employee(eid), aid INTEGER REFERENCES aircraft(aid), PRIMARY KEY (eid, aid));
INSERT INTO aircraft VALUES
 (1, 'Boeing 747-400', 8430),
 (2, 'Boeing 737-800', 3383),
 (3, 'Airbus A340-300', 7120),
 (4, 'British Aerospace Jetstream 41', 1502),
 (5, 'Embraer ERJ-145', 1530);
INSERT INTO employee VALUES
 (242518965, 'James Smith', 120433),
 (141582651, 'Mary Johnson', 178345),
 (11564812, 'John Williams', 153972),
 (567354612, 'Lisa Walker', 256481),
 (552455318, 'Larry West', 101745),
 (390487451, 'Lawrence Sperry', 212156),
 (274878974, 'Michael Miller', 99890),
 (254099823, 'Patricia Jones', 24450);
INSERT INTO certificate VALUES
 (242518965, 2), (242518965, 3), (141582651, 2), (141582651, 3), (141582651, 1),
 (11564812, 2), (567354612, 1), (567354612, 4), (552455318, 3), (390487451, 5);
"#;

const TOY: &str = r#"
CREATE TABLE t (a INTEGER, b TEXT, c REAL);
INSERT INTO t VALUES (1, 'x', 0.5), (2, 'y', 1.5), (3, 'x', 2.5), (4, 'z', 3.5), (5, 'y', 4.5);
"#;

/// `(db_id, creation script)` for every fixture database.
pub const DATABASES: [(&str, &str); 5] = [
    ("concert_singer", CONCERT_SINGER),
    ("department_management", DEPARTMENT_MANAGEMENT),
    ("gymnast", GYMNAST),
    ("flight_1", FLIGHT_1),
    ("toy", TOY),
];

/// Semantically equal statements with different text, on the `toy` database.
pub const EQUIVALENT_PAIR: (&str, &str) = ("SELECT a FROM t WHERE a >= 2", "SELECT a FROM t WHERE a > 1");

/// A recursive CTE that never terminates on its own.
pub const RUNAWAY_QUERY: &str =
    "WITH RECURSIVE r(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM r) SELECT count(*) FROM r";

type Row = (&'static str, &'static str, &'static str);

const TRAIN: &[Row] = &[
    // multi-set
    ("concert_singer", "What are the countries that have both singers above age 40 and singers below age 30?", "SELECT Country FROM singer WHERE Age > 40 INTERSECT SELECT Country FROM singer WHERE Age < 30"),
    ("flight_1", "Show ids for all employees who don't have a certificate.", "SELECT eid FROM employee EXCEPT SELECT eid FROM certificate"),
    ("flight_1", "Show names for all employees who have certificates on both Boeing 737-800 and Airbus A340-300.", "SELECT T1.name FROM employee AS T1 JOIN certificate AS T2 ON T1.eid = T2.eid JOIN aircraft AS T3 ON T3.aid = T2.aid WHERE T3.name = 'Boeing 737-800' INTERSECT SELECT T1.name FROM employee AS T1 JOIN certificate AS T2 ON T1.eid = T2.eid JOIN aircraft AS T3 ON T3.aid = T2.aid WHERE T3.name = 'Airbus A340-300'"),
    ("concert_singer", "Show the names of stadiums that hosted a concert in 2014 or in 2015.", "SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T1.Year = '2014' UNION SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T1.Year = '2015'"),
    ("concert_singer", "Show the names of stadiums that did not have any concert.", "SELECT Name FROM stadium EXCEPT SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID"),
    ("department_management", "Which states have both heads older than 60 and heads younger than 55?", "SELECT born_state FROM head WHERE age > 60 INTERSECT SELECT born_state FROM head WHERE age < 55"),
    // combination
    ("gymnast", "How many gymnasts are from each hometown?", "SELECT T2.Hometown, COUNT(*) FROM gymnast AS T1 JOIN people AS T2 ON T1.Gymnast_ID = T2.People_ID GROUP BY T2.Hometown"),
    ("concert_singer", "Show the stadium name and the number of concerts in each stadium.", "SELECT T2.Name, COUNT(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID GROUP BY T1.Stadium_ID"),
    ("concert_singer", "Which year has the most concerts?", "SELECT Year FROM concert GROUP BY Year ORDER BY COUNT(*) DESC LIMIT 1"),
    ("flight_1", "Show the name of each aircraft and the number of employees certified on it.", "SELECT T1.name, COUNT(*) FROM aircraft AS T1 JOIN certificate AS T2 ON T1.aid = T2.aid GROUP BY T1.aid"),
    ("department_management", "How many heads were born in each state?", "SELECT born_state, COUNT(*) FROM head GROUP BY born_state"),
    ("gymnast", "What is the average age of people in each hometown?", "SELECT Hometown, AVG(Age) FROM people GROUP BY Hometown"),
    // filtering
    ("concert_singer", "What are the names of singers older than 40?", "SELECT Name FROM singer WHERE Age > 40"),
    ("department_management", "How many heads of the departments are older than 56?", "SELECT count(*) FROM head WHERE age > 56"),
    ("gymnast", "What are the total points of gymnasts whose hometown is Santo Domingo?", "SELECT T1.Total_Points FROM gymnast AS T1 JOIN people AS T2 ON T1.Gymnast_ID = T2.People_ID WHERE T2.Hometown = 'Santo Domingo'"),
    ("flight_1", "What are the names of aircraft that can fly more than 5000 miles?", "SELECT name FROM aircraft WHERE distance > 5000"),
    ("concert_singer", "Find the number of concerts that happened in the stadium with the highest capacity.", "SELECT count(*) FROM concert WHERE Stadium_ID = (SELECT Stadium_ID FROM stadium ORDER BY Capacity DESC LIMIT 1)"),
    ("department_management", "List the names of departments created after 1900.", "SELECT Name FROM department WHERE Creation > '1900'"),
    // simple
    ("department_management", "List the name, born state and age of the heads of departments ordered by age.", "SELECT name, born_state, age FROM head ORDER BY age"),
    ("department_management", "List the creation year, name and budget of each department.", "SELECT Creation, Name, Budget_in_Billions FROM department"),
    ("concert_singer", "How many singers do we have?", "SELECT count(*) FROM singer"),
    ("flight_1", "List the names of all employees sorted by salary.", "SELECT name FROM employee ORDER BY salary"),
    ("gymnast", "What is the average total points of all gymnasts?", "SELECT avg(Total_Points) FROM gymnast"),
    ("concert_singer", "Show the location and name of every stadium.", "SELECT Location, Name FROM stadium"),
];

const DEV: &[(&str, &str, &str, Difficulty)] = &[
    ("flight_1", "Which employees hold certificates for both the Boeing 747-400 and the Boeing 737-800? Give their names.", "SELECT T1.name FROM employee AS T1 JOIN certificate AS T2 ON T1.eid = T2.eid JOIN aircraft AS T3 ON T3.aid = T2.aid WHERE T3.name = 'Boeing 747-400' INTERSECT SELECT T1.name FROM employee AS T1 JOIN certificate AS T2 ON T1.eid = T2.eid JOIN aircraft AS T3 ON T3.aid = T2.aid WHERE T3.name = 'Boeing 737-800'", Difficulty::Extra),
    ("concert_singer", "Which countries have both male and female singers?", "SELECT Country FROM singer WHERE Is_male = 'T' INTERSECT SELECT Country FROM singer WHERE Is_male = 'F'", Difficulty::Hard),
    ("department_management", "Show the ids of departments that have no temporary acting head.", "SELECT Department_ID FROM department EXCEPT SELECT department_ID FROM management WHERE temporary_acting = 'Yes'", Difficulty::Hard),
    ("concert_singer", "How many singers are from each country?", "SELECT Country, COUNT(*) FROM singer GROUP BY Country", Difficulty::Medium),
    ("department_management", "Which state has the most heads?", "SELECT born_state FROM head GROUP BY born_state ORDER BY COUNT(*) DESC LIMIT 1", Difficulty::Medium),
    ("gymnast", "For each hometown, what is the highest total points of a gymnast?", "SELECT T2.Hometown, MAX(T1.Total_Points) FROM gymnast AS T1 JOIN people AS T2 ON T1.Gymnast_ID = T2.People_ID GROUP BY T2.Hometown", Difficulty::Hard),
    ("department_management", "How many departments have more than 100000 employees?", "SELECT count(*) FROM department WHERE Num_Employees > 100000", Difficulty::Easy),
    ("flight_1", "What are the names of employees earning more than 150000?", "SELECT name FROM employee WHERE salary > 150000", Difficulty::Easy),
    ("toy", "Which values of a are greater than 1?", "SELECT a FROM t WHERE a > 1", Difficulty::Easy),
    ("concert_singer", "How many concerts are there?", "SELECT count(*) FROM concert", Difficulty::Easy),
    ("gymnast", "List the names of people sorted by height in descending order.", "SELECT Name FROM people ORDER BY Height DESC", Difficulty::Medium),
    ("flight_1", "What is the average salary of all employees?", "SELECT avg(salary) FROM employee", Difficulty::Easy),
];

pub fn train_examples() -> Vec<QueryExample> {
    TRAIN
        .iter()
        .enumerate()
        .map(|(i, (db, q, sql))| QueryExample::new(format!("train_{i:03}"), *db, *q, *sql))
        .collect()
}

pub fn dev_examples() -> Vec<QueryExample> {
    DEV.iter()
        .enumerate()
        .map(|(i, (db, q, sql, d))| {
            let mut ex = QueryExample::new(format!("dev_{i:03}"), *db, *q, *sql);
            ex.difficulty = Some(*d);
            ex
        })
        .collect()
}

/// One example per group: intersect, head order-by, gymnast group-by,
/// singer where.
pub fn group_examples() -> Vec<QueryExample> {
    [0usize, 18, 6, 12]
        .iter()
        .map(|&i| train_examples().swap_remove(i))
        .collect()
}

fn create_db(path: &Path, script: &str) -> rusqlite::Result<()> {
    if path.exists() {
        fs::remove_file(path).map_err(|e| rusqlite::Error::ToSqlConversionFailure(Box::new(e)))?;
    }
    let conn = Connection::open(path)?;
    conn.execute_batch(script)
}

/// A `tables.json` record read back from the database catalogue.
fn schema_record(db_id: &str, path: &Path) -> rusqlite::Result<Value> {
    let conn = Connection::open(path)?;
    let mut names: Vec<String> = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY rowid")?
        .query_map([], |r| r.get(0))?
        .collect::<Result<_, _>>()?;
    names.retain(|n| !n.starts_with("sqlite_"));
    let mut columns: Vec<(i64, String)> = vec![(-1, "*".into())];
    let mut types: Vec<String> = vec!["text".into()];
    for (ti, table) in names.iter().enumerate() {
        let mut stmt = conn.prepare(&format!("PRAGMA table_info(\"{table}\")"))?;
        let cols: Vec<(String, String)> = stmt
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?)))?
            .collect::<Result<_, _>>()?;
        for (name, ty) in cols {
            columns.push((ti as i64, name));
            types.push(if ty.eq_ignore_ascii_case("TEXT") { "text" } else { "number" }.into());
        }
    }
    let index_of = |table: &str, column: &str| {
        let ti = names.iter().position(|n| n.eq_ignore_ascii_case(table))? as i64;
        columns
            .iter()
            .position(|(t, c)| *t == ti && c.eq_ignore_ascii_case(column))
    };
    let mut fks = Vec::new();
    for table in &names {
        let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list(\"{table}\")"))?;
        let rows: Vec<(String, String, String)> = stmt
            .query_map([], |r| Ok((r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<Result<_, _>>()?;
        for (target, from, to) in rows {
            if let (Some(a), Some(b)) = (index_of(table, &from), index_of(&target, &to)) {
                fks.push(json!([a, b]));
            }
        }
    }
    let lower = |s: &str| s.to_lowercase().replace('_', " ");
    Ok(json!({
        "db_id": db_id,
        "table_names_original": names,
        "table_names": names.iter().map(|n| lower(n)).collect::<Vec<_>>(),
        "column_names_original": columns.iter().map(|(t, c)| json!([t, c])).collect::<Vec<_>>(),
        "column_names": columns.iter().map(|(t, c)| json!([t, lower(c)])).collect::<Vec<_>>(),
        "column_types": types,
        "primary_keys": [],
        "foreign_keys": fks,
    }))
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub tables: PathBuf,
    pub db_root: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
}

/// Writes databases under `<dir>/database/<db_id>/<db_id>.sqlite`, plus
/// `tables.json`, `train.json` and `dev.json`.
pub fn write_fixture_corpus(dir: &Path) -> io::Result<FixturePaths> {
    let db_root = dir.join("database");
    let to_io = |e: rusqlite::Error| io::Error::other(e.to_string());
    let mut records = Vec::new();
    for (db_id, script) in DATABASES {
        let db_dir = db_root.join(db_id);
        fs::create_dir_all(&db_dir)?;
        let path = db_dir.join(format!("{db_id}.sqlite"));
        create_db(&path, script).map_err(to_io)?;
        records.push(schema_record(db_id, &path).map_err(to_io)?);
    }
    let tables = dir.join("tables.json");
    fs::write(&tables, serde_json::to_string_pretty(&records)?)?;
    let train = dir.join("train.json");
    write_examples(&train, &train_examples(), DatasetFormat::Spider)?;
    let dev = dir.join("dev.json");
    write_examples(&dev, &dev_examples(), DatasetFormat::Spider)?;
    Ok(FixturePaths {
        root: dir.to_path_buf(),
        tables,
        db_root,
        train,
        dev,
    })
}
